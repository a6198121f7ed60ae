#include "dvmsr/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "json.hpp"

namespace dvmsr {

namespace {

constexpr char kMagic[8] = {'D', 'V', 'M', 'S', 'R', 'C', 'K', 'P'};
constexpr uint32_t kVersion = 1;

using json = nlohmann::ordered_json;

json config_to_json_obj(const ModelConfig& cfg) {
    json j;
    j["n_rssb"] = cfg.n_rssb;
    j["vimm_per_rssb"] = cfg.vimm_per_rssb;
    j["channels"] = cfg.channels;
    j["scale"] = cfg.scale;
    j["expand"] = cfg.expand;
    j["n_state"] = cfg.n_state;
    j["d_conv"] = cfg.d_conv;
    j["dt_rank"] = cfg.dt_rank;
    j["bidirectional"] = cfg.bidirectional;
    j["x1_activation"] = cfg.x1_activation;
    j["separate_norms"] = cfg.separate_norms;
    j["use_d_skip"] = cfg.use_d_skip;
    j["upsampler"] = cfg.upsampler;
    j["in_channels"] = cfg.in_channels;
    return j;
}

ModelConfig config_from_json_obj(const json& j) {
    static const std::vector<std::string> known = {
        "n_rssb",        "vimm_per_rssb", "channels",       "scale",
        "expand",        "n_state",       "d_conv",         "dt_rank",
        "bidirectional", "x1_activation", "separate_norms", "use_d_skip",
        "upsampler",     "in_channels"};
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (std::find(known.begin(), known.end(), it.key()) == known.end()) {
            throw std::invalid_argument("unknown model config key: " + it.key());
        }
    }
    ModelConfig cfg;
    if (j.contains("n_rssb")) cfg.n_rssb = j["n_rssb"].get<int>();
    if (j.contains("vimm_per_rssb")) cfg.vimm_per_rssb = j["vimm_per_rssb"].get<std::vector<int>>();
    if (j.contains("channels")) cfg.channels = j["channels"].get<int>();
    if (j.contains("scale")) cfg.scale = j["scale"].get<int>();
    if (j.contains("expand")) cfg.expand = j["expand"].get<double>();
    if (j.contains("n_state")) cfg.n_state = j["n_state"].get<int>();
    if (j.contains("d_conv")) cfg.d_conv = j["d_conv"].get<int>();
    if (j.contains("dt_rank")) cfg.dt_rank = j["dt_rank"].get<int>();
    if (j.contains("bidirectional")) cfg.bidirectional = j["bidirectional"].get<bool>();
    if (j.contains("x1_activation")) cfg.x1_activation = j["x1_activation"].get<bool>();
    if (j.contains("separate_norms")) cfg.separate_norms = j["separate_norms"].get<bool>();
    if (j.contains("use_d_skip")) cfg.use_d_skip = j["use_d_skip"].get<bool>();
    if (j.contains("upsampler")) cfg.upsampler = j["upsampler"].get<std::string>();
    if (j.contains("in_channels")) cfg.in_channels = j["in_channels"].get<int>();
    cfg.validate();
    return cfg;
}

json tensor_group_manifest(const std::vector<std::pair<std::string, Tensor>>& group,
                           uint64_t& offset) {
    json arr = json::array();
    for (const auto& [name, t] : group) {
        json e;
        e["name"] = name;
        e["shape"] = t.shape();
        e["offset"] = offset;
        offset += static_cast<uint64_t>(t.numel()) * sizeof(double);
        arr.push_back(std::move(e));
    }
    return arr;
}

void write_group(std::ofstream& out, const std::vector<std::pair<std::string, Tensor>>& group) {
    for (const auto& [name, t] : group) {
        out.write(reinterpret_cast<const char*>(t.data()),
                  static_cast<std::streamsize>(t.numel() * sizeof(double)));
    }
}

std::vector<std::pair<std::string, Tensor>> read_group(const json& arr,
                                                       const std::vector<char>& payload) {
    std::vector<std::pair<std::string, Tensor>> group;
    for (const auto& e : arr) {
        std::string name = e.at("name").get<std::string>();
        Shape shape = e.at("shape").get<Shape>();
        uint64_t offset = e.at("offset").get<uint64_t>();
        uint64_t bytes = static_cast<uint64_t>(numel(shape)) * sizeof(double);
        if (offset + bytes > payload.size()) {
            throw CheckpointTruncatedError("checkpoint payload ends inside tensor " + name);
        }
        std::vector<double> data(static_cast<size_t>(numel(shape)));
        std::memcpy(data.data(), payload.data() + offset, static_cast<size_t>(bytes));
        group.emplace_back(std::move(name), Tensor::from_data(std::move(shape), std::move(data)));
    }
    return group;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    json manifest;
    manifest["model_config"] = config_to_json_obj(ckpt.model_config);
    manifest["iteration"] = ckpt.iteration;
    manifest["rng_state"] = ckpt.rng_state;
    manifest["adam_t"] = ckpt.adam_t;
    manifest["has_optimizer"] = ckpt.has_optimizer;

    uint64_t offset = 0;
    manifest["tensors"] = tensor_group_manifest(ckpt.tensors, offset);
    manifest["aux_tensors"] = tensor_group_manifest(ckpt.aux_tensors, offset);
    if (ckpt.has_optimizer) {
        manifest["opt_m"] = tensor_group_manifest(ckpt.opt_m, offset);
        manifest["opt_v"] = tensor_group_manifest(ckpt.opt_v, offset);
    }

    std::string mbytes = manifest.dump();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path);
    out.write(kMagic, sizeof(kMagic));
    uint32_t version = kVersion;
    uint64_t mlen = mbytes.size();
    out.write(reinterpret_cast<const char*>(&version), sizeof(version));
    out.write(reinterpret_cast<const char*>(&mlen), sizeof(mlen));
    out.write(mbytes.data(), static_cast<std::streamsize>(mbytes.size()));
    write_group(out, ckpt.tensors);
    write_group(out, ckpt.aux_tensors);
    if (ckpt.has_optimizer) {
        write_group(out, ckpt.opt_m);
        write_group(out, ckpt.opt_v);
    }
    if (!out) throw std::runtime_error("short write to " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);

    char magic[8];
    in.read(magic, sizeof(magic));
    if (in.gcount() != sizeof(magic)) throw CheckpointTruncatedError(path + ": shorter than the header");
    if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw CheckpointFormatError(path + ": not a checkpoint file");
    }
    uint32_t version = 0;
    uint64_t mlen = 0;
    in.read(reinterpret_cast<char*>(&version), sizeof(version));
    in.read(reinterpret_cast<char*>(&mlen), sizeof(mlen));
    if (!in) throw CheckpointTruncatedError(path + ": shorter than the header");
    if (version != kVersion) {
        throw CheckpointVersionError(path + ": version " + std::to_string(version) +
                                     ", expected " + std::to_string(kVersion));
    }
    std::string mbytes(mlen, '\0');
    in.read(mbytes.data(), static_cast<std::streamsize>(mlen));
    if (in.gcount() != static_cast<std::streamsize>(mlen)) {
        throw CheckpointTruncatedError(path + ": manifest cut short");
    }
    json manifest;
    try {
        manifest = json::parse(mbytes);
    } catch (const std::exception& e) {
        throw CheckpointFormatError(path + ": bad manifest: " + e.what());
    }

    std::vector<char> payload((std::istreambuf_iterator<char>(in)),
                              std::istreambuf_iterator<char>());

    Checkpoint ckpt;
    ckpt.model_config = config_from_json_obj(manifest.at("model_config"));
    ckpt.iteration = manifest.at("iteration").get<int64_t>();
    ckpt.rng_state = manifest.at("rng_state").get<std::string>();
    ckpt.adam_t = manifest.at("adam_t").get<int64_t>();
    ckpt.has_optimizer = manifest.at("has_optimizer").get<bool>();
    ckpt.tensors = read_group(manifest.at("tensors"), payload);
    ckpt.aux_tensors = read_group(manifest.at("aux_tensors"), payload);
    if (ckpt.has_optimizer) {
        ckpt.opt_m = read_group(manifest.at("opt_m"), payload);
        ckpt.opt_v = read_group(manifest.at("opt_v"), payload);
    }
    return ckpt;
}

DvmsrModel model_from_checkpoint(const Checkpoint& ckpt) {
    auto manifest = parameter_manifest(ckpt.model_config);
    if (manifest.size() != ckpt.tensors.size()) {
        throw CheckpointShapeError("checkpoint holds " + std::to_string(ckpt.tensors.size()) +
                                   " tensors, config expects " + std::to_string(manifest.size()));
    }
    for (size_t i = 0; i < manifest.size(); ++i) {
        if (ckpt.tensors[i].first != manifest[i].name ||
            ckpt.tensors[i].second.shape() != manifest[i].shape) {
            throw CheckpointShapeError(
                "tensor " + ckpt.tensors[i].first + " has shape " +
                shape_str(ckpt.tensors[i].second.shape()) + ", config expects " +
                manifest[i].name + " " + shape_str(manifest[i].shape));
        }
    }
    std::vector<std::pair<std::string, Tensor>> params;
    params.reserve(ckpt.tensors.size());
    for (const auto& [name, t] : ckpt.tensors) params.emplace_back(name, t.clone());
    return DvmsrModel::from_parameters(ckpt.model_config, std::move(params));
}

Checkpoint checkpoint_from_model(const DvmsrModel& model) {
    Checkpoint ckpt;
    ckpt.model_config = model.config();
    for (const auto& [name, t] : model.parameters()) ckpt.tensors.emplace_back(name, t.clone());
    return ckpt;
}

std::string model_config_to_json(const ModelConfig& cfg) {
    return config_to_json_obj(cfg).dump(2);
}

ModelConfig model_config_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const std::exception& e) {
        throw std::invalid_argument(std::string("bad model config JSON: ") + e.what());
    }
    return config_from_json_obj(j);
}

}  // namespace dvmsr
