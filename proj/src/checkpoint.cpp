#include "dapd/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

#include "dapd/errors.hpp"

namespace dapd {

namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

constexpr char kMagic[4] = {'D', 'A', 'P', 'D'};

nlohmann::json config_to_json(const ModelConfig& c) {
    return {{"num_layers", c.num_layers}, {"num_heads", c.num_heads},
            {"model_dim", c.model_dim},   {"vocab_size", c.vocab_size},
            {"seq_len", c.seq_len},       {"learned_pos", c.learned_pos}};
}

ModelConfig config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.num_layers = j.at("num_layers").get<int>();
    c.num_heads = j.at("num_heads").get<int>();
    c.model_dim = j.at("model_dim").get<int>();
    c.vocab_size = j.at("vocab_size").get<int>();
    c.seq_len = j.at("seq_len").get<int>();
    c.learned_pos = j.at("learned_pos").get<bool>();
    return c;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    const ParamLayout layout(ckpt.config);
    if (ckpt.params.size() != layout.total())
        throw CheckpointError("save_checkpoint: parameter count does not match config");

    nlohmann::json sections = nlohmann::json::array();
    for (const auto& s : layout.sections())
        sections.push_back({{"name", s.name}, {"count", s.count}});
    const nlohmann::json header{
        {"config", config_to_json(ckpt.config)},
        {"sections", std::move(sections)},
        {"train_meta",
         {{"steps_done", ckpt.meta.steps_done},
          {"final_loss", ckpt.meta.final_loss},
          {"seed", ckpt.meta.seed},
          {"format_version", ckpt.meta.format_version}}}};
    const std::string htext = header.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open checkpoint for writing: " + path);
    out.write(kMagic, 4);
    const std::uint32_t version = kCheckpointVersion;
    out.write(reinterpret_cast<const char*>(&version), 4);
    const std::uint32_t hlen = static_cast<std::uint32_t>(htext.size());
    out.write(reinterpret_cast<const char*>(&hlen), 4);
    out.write(htext.data(), htext.size());
    out.write(reinterpret_cast<const char*>(ckpt.params.data()),
              static_cast<std::streamsize>(ckpt.params.size() * sizeof(float)));
    if (!out) throw IoError("checkpoint write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint: " + path);

    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0)
        throw CheckpointError("bad checkpoint magic: " + path);
    std::uint32_t version = 0;
    in.read(reinterpret_cast<char*>(&version), 4);
    if (!in || version != kCheckpointVersion)
        throw CheckpointError("unsupported checkpoint version " + std::to_string(version) + ": " +
                              path);
    std::uint32_t hlen = 0;
    in.read(reinterpret_cast<char*>(&hlen), 4);
    if (!in) throw CheckpointError("truncated checkpoint header: " + path);
    std::string htext(hlen, '\0');
    in.read(htext.data(), hlen);
    if (!in) throw CheckpointError("truncated checkpoint header: " + path);

    Checkpoint ckpt;
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(htext);
        ckpt.config = config_from_json(header.at("config"));
        const auto& meta = header.at("train_meta");
        ckpt.meta.steps_done = meta.at("steps_done").get<int>();
        ckpt.meta.final_loss = meta.at("final_loss").get<double>();
        ckpt.meta.seed = meta.at("seed").get<std::uint64_t>();
        ckpt.meta.format_version = meta.at("format_version").get<int>();
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(std::string("malformed checkpoint header: ") + e.what());
    }
    if (ckpt.meta.format_version != kCheckpointVersion)
        throw CheckpointError("unsupported checkpoint format version");

    const ParamLayout layout(ckpt.config);
    // The declared sections must match the config-derived layout exactly.
    const auto& declared = header.at("sections");
    if (declared.size() != layout.sections().size())
        throw CheckpointError("checkpoint section index does not match config");
    for (std::size_t i = 0; i < declared.size(); ++i) {
        if (declared[i].at("name").get<std::string>() != layout.sections()[i].name ||
            declared[i].at("count").get<std::size_t>() != layout.sections()[i].count)
            throw CheckpointError("checkpoint section index does not match config");
    }

    ckpt.params.resize(layout.total());
    in.read(reinterpret_cast<char*>(ckpt.params.data()),
            static_cast<std::streamsize>(ckpt.params.size() * sizeof(float)));
    if (!in) throw CheckpointError("truncated checkpoint parameters: " + path);
    char extra;
    if (in.read(&extra, 1)) throw CheckpointError("trailing bytes in checkpoint: " + path);
    return ckpt;
}

}  // namespace dapd
