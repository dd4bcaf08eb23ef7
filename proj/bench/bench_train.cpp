// Throughput comparison of the training gradient paths: serial per-example
// reference vs the chunked OpenMP kernel at 1..max threads. Also reports the
// relative gradient difference between the two implementations.
#include <chrono>
#include <cmath>
#include <cstring>
#include <iostream>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "dapd/model.hpp"
#include "dapd/train.hpp"

using namespace dapd;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

double rel_diff(const std::vector<float>& a, const std::vector<float>& b) {
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = static_cast<double>(a[i]) - b[i];
        num += d * d;
        den += static_cast<double>(a[i]) * a[i];
    }
    return std::sqrt(num / std::max(den, 1e-30));
}

}  // namespace

int main(int argc, char** argv) {
    int reps = 5;
    int batch = 256;
    ModelConfig cfg;
    for (int i = 1; i < argc; ++i) {
        if (!std::strcmp(argv[i], "--quick")) {
            reps = 1;
            batch = 64;
            cfg.model_dim = 32;
            cfg.num_layers = 2;
        } else if (!std::strcmp(argv[i], "--reps") && i + 1 < argc) {
            reps = std::stoi(argv[++i]);
        } else if (!std::strcmp(argv[i], "--batch") && i + 1 < argc) {
            batch = std::stoi(argv[++i]);
        } else if (!std::strcmp(argv[i], "--dim") && i + 1 < argc) {
            cfg.model_dim = std::stoi(argv[++i]);
        } else if (!std::strcmp(argv[i], "--layers") && i + 1 < argc) {
            cfg.num_layers = std::stoi(argv[++i]);
        } else {
            std::cerr << "usage: bench_train [--quick] [--reps N] [--batch N] [--dim N] [--layers N]\n";
            return 1;
        }
    }

    const auto data = toy::gen_dataset(4096, 99);
    const auto params = init_params<float>(cfg, 7);
    const ParamLayout layout(cfg);
    std::vector<float> grad_ref(layout.total()), grad_par(layout.total());
    const auto batch_items = derive_batch(data, 42, 0, batch);

    std::cout << "model: layers=" << cfg.num_layers << " dim=" << cfg.model_dim
              << " heads=" << cfg.num_heads << ", batch=" << batch << ", reps=" << reps << "\n";

    auto t0 = Clock::now();
    double loss_ref = 0.0;
    for (int r = 0; r < reps; ++r)
        loss_ref = reference_batch_grad(cfg, params, data, batch_items, grad_ref);
    const double sec_ref = seconds_since(t0) / reps;
    std::cout << "reference (serial loops):  " << sec_ref * 1e3 << " ms/step, "
              << batch / sec_ref << " ex/s, loss " << loss_ref << "\n";

    int max_threads = 1;
#ifdef _OPENMP
    max_threads = omp_get_max_threads();
#endif
    for (int threads = 1; threads <= max_threads; threads *= 2) {
#ifdef _OPENMP
        omp_set_num_threads(threads);
#endif
        t0 = Clock::now();
        double loss_par = 0.0;
        for (int r = 0; r < reps; ++r)
            loss_par = parallel_batch_grad(cfg, params, data, batch_items, grad_par);
        const double sec = seconds_since(t0) / reps;
        std::cout << "chunked openmp x" << threads << ":        " << sec * 1e3 << " ms/step, "
                  << batch / sec << " ex/s, loss " << loss_par << " (speedup vs reference "
                  << sec_ref / sec << "x)\n";
    }

    std::cout << "gradient rel diff (reference vs chunked): " << rel_diff(grad_ref, grad_par)
              << "\n";
    return 0;
}
