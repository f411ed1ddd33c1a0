#include "sim/harness/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "sim/nn/mlp.hpp"

namespace sim::harness {

namespace {

constexpr char kMagic[8] = {'S', 'I', 'M', 'C', 'K', 'P', 'T', '\0'};

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
std::uint64_t get_u64(const unsigned char* p) {
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
    return v;
}
std::uint32_t get_u32(const unsigned char* p) {
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | p[i];
    return v;
}

nlohmann::json rng_json(const Rng::State& s) {
    return {{"s", s.s},
            {"seed", s.seed},
            {"has_spare", s.has_spare},
            {"spare_bits", std::bit_cast<std::uint64_t>(s.spare)}};
}

Rng::State rng_from_json(const nlohmann::json& j) {
    Rng::State s{};
    s.s = j.at("s").get<std::array<std::uint64_t, 4>>();
    s.seed = j.at("seed").get<std::uint64_t>();
    s.has_spare = j.at("has_spare").get<bool>();
    s.spare = std::bit_cast<double>(j.at("spare_bits").get<std::uint64_t>());
    return s;
}

nlohmann::json net_json(const nn::MlpNet& n) {
    const auto& c = n.config();
    return {{"widths", c.widths},
            {"activation", nn::to_string(c.activation)},
            {"conditioning", nn::to_string(c.conditioning)},
            {"time_scale", c.time_scale}};
}

nn::MlpNet net_from(const nlohmann::json& a, const std::vector<NamedArray>& tensors) {
    nn::MlpConfig cfg;
    cfg.widths = a.at("widths").get<std::vector<std::size_t>>();
    cfg.activation = nn::activation_from_string(a.at("activation").get<std::string>());
    cfg.conditioning = nn::conditioning_from_string(a.at("conditioning").get<std::string>());
    cfg.time_scale = a.at("time_scale").get<double>();
    Rng unused(0);
    nn::MlpNet net(cfg, unused);
    const auto names = net.parameter_names();
    if (names.size() != tensors.size())
        throw CheckpointError("checkpoint: architecture needs " + std::to_string(names.size()) + " tensors, file has " +
                              std::to_string(tensors.size()));
    std::vector<std::vector<double>> values;
    for (std::size_t i = 0; i < names.size(); ++i) {
        if (tensors[i].name != names[i])
            throw CheckpointError("checkpoint: tensor " + std::to_string(i) + " is '" + tensors[i].name + "', expected '" +
                                  names[i] + "'");
        values.push_back(tensors[i].values);
    }
    net.load_parameters(values);
    return net;
}

std::vector<NamedArray> arrays_of(const std::vector<nn::Tensor>& params, const std::vector<std::string>& names) {
    std::vector<NamedArray> out;
    for (std::size_t i = 0; i < params.size(); ++i)
        out.push_back({names[i], params[i].shape(), std::vector<double>(params[i].data().begin(), params[i].data().end())});
    return out;
}

} // namespace

void save_checkpoint(const std::string& path, const Checkpoint& c) {
    nlohmann::json header{{"format_version", Checkpoint::kVersion},
                          {"kind", c.kind},
                          {"architecture", c.architecture},
                          {"step", c.step},
                          {"rng", rng_json(c.rng)},
                          {"config_hash", c.config_hash},
                          {"meta", c.meta}};
    std::size_t offset = 0;
    nlohmann::json arrays = nlohmann::json::array();
    for (const auto& t : c.tensors) {
        std::size_t n = 1;
        for (auto s : t.shape) n *= s;
        if (n != t.values.size())
            throw CheckpointError("save_checkpoint: array '" + t.name + "' shape does not match its value count");
        arrays.push_back({{"name", t.name}, {"shape", t.shape}, {"offset", offset}, {"count", n}});
        offset += n;
    }
    header["arrays"] = arrays;
    header["payload_values"] = offset;

    const std::string h = header.dump();
    std::string out(kMagic, sizeof kMagic);
    put_u32(out, Checkpoint::kVersion);
    put_u64(out, h.size());
    out += h;
    for (const auto& t : c.tensors)
        for (double v : t.values) put_u64(out, std::bit_cast<std::uint64_t>(v));

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw CheckpointError("save_checkpoint: cannot open '" + path + "' for writing");
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw CheckpointError("save_checkpoint: write to '" + path + "' failed");
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw CheckpointError("load_checkpoint: cannot open '" + path + "'");
    const std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
    const std::size_t prefix = sizeof kMagic + 4 + 8;

    if (bytes.size() < prefix) throw CheckpointError("load_checkpoint: '" + path + "' is truncated (no header)");
    if (std::memcmp(p, kMagic, sizeof kMagic) != 0)
        throw CheckpointError("load_checkpoint: '" + path + "' is not a checkpoint file");
    const std::uint32_t version = get_u32(p + sizeof kMagic);
    if (version != Checkpoint::kVersion)
        throw CheckpointError("load_checkpoint: '" + path + "' has format version " + std::to_string(version) +
                              ", this build reads version " + std::to_string(Checkpoint::kVersion));
    const std::uint64_t hlen = get_u64(p + sizeof kMagic + 4);
    if (hlen > bytes.size() - prefix)
        throw CheckpointError("load_checkpoint: '" + path + "' is truncated (header)");

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(bytes.substr(prefix, hlen));
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError("load_checkpoint: '" + path + "' has a corrupt header: " + e.what());
    }

    Checkpoint c;
    try {
        if (header.at("format_version").get<std::uint32_t>() != version)
            throw CheckpointError("load_checkpoint: '" + path + "' header version " +
                                  std::to_string(header.at("format_version").get<std::uint32_t>()) +
                                  " disagrees with file version " + std::to_string(version));
        const std::size_t total = header.at("payload_values").get<std::size_t>();
        const std::size_t payload = bytes.size() - prefix - hlen;
        if (payload != 8 * total)
            throw CheckpointError("load_checkpoint: '" + path + "' is truncated (payload has " + std::to_string(payload) +
                                  " bytes, expected " + std::to_string(8 * total) + ")");
        const unsigned char* data = p + prefix + hlen;
        c.kind = header.at("kind").get<std::string>();
        c.architecture = header.at("architecture");
        c.step = header.at("step").get<std::size_t>();
        c.rng = rng_from_json(header.at("rng"));
        c.config_hash = header.at("config_hash").get<std::string>();
        c.meta = header.at("meta");
        for (const auto& a : header.at("arrays")) {
            NamedArray t;
            t.name = a.at("name").get<std::string>();
            t.shape = a.at("shape").get<std::vector<std::size_t>>();
            const auto off = a.at("offset").get<std::size_t>();
            const auto n = a.at("count").get<std::size_t>();
            if (off + n > total) throw CheckpointError("load_checkpoint: array '" + t.name + "' overruns the payload");
            t.values.resize(n);
            for (std::size_t i = 0; i < n; ++i) t.values[i] = std::bit_cast<double>(get_u64(data + 8 * (off + i)));
            c.tensors.push_back(std::move(t));
        }
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError("load_checkpoint: '" + path + "' header is missing fields: " + e.what());
    }
    return c;
}

void require_config_match(const Checkpoint& c, const std::string& expected_hash, bool force) {
    if (c.config_hash == expected_hash || force) return;
    throw CheckpointError("checkpoint was written under config " + c.config_hash + ", current config is " +
                          expected_hash + " (pass --force to resume anyway)");
}

Checkpoint to_checkpoint(const distill::NetDenoiser& d) {
    Checkpoint c;
    c.kind = "denoiser";
    c.architecture = {{"net", net_json(d.net())},
                      {"preconditioning", distill::to_string(d.preconditioning())},
                      {"sigma_data", d.sigma_data()}};
    c.tensors = arrays_of(d.parameters(), d.parameter_names());
    return c;
}

Checkpoint to_checkpoint(const distill::Generator& g) {
    Checkpoint c;
    if (auto* m = dynamic_cast<const distill::MlpGenerator*>(&g)) {
        c.kind = "mlp_generator";
        c.architecture = {{"net", net_json(m->net())}};
    } else if (auto* d = dynamic_cast<const distill::DenoiserGenerator*>(&g)) {
        c.kind = "denoiser_generator";
        c.architecture = {{"net", net_json(d->denoiser().net())},
                          {"preconditioning", distill::to_string(d->denoiser().preconditioning())},
                          {"sigma_data", d->denoiser().sigma_data()},
                          {"t_star", d->t_star()}};
    } else {
        throw CheckpointError("to_checkpoint: unsupported generator " + g.describe());
    }
    c.tensors = arrays_of(g.parameters(), g.parameter_names());
    return c;
}

distill::NetDenoiser denoiser_from_checkpoint(const Checkpoint& c) {
    if (c.kind != "denoiser" && c.kind != "denoiser_generator")
        throw CheckpointError("checkpoint holds a " + c.kind + ", not a denoiser");
    const auto& a = c.architecture;
    return distill::NetDenoiser(net_from(a.at("net"), c.tensors),
                                distill::preconditioning_from_string(a.at("preconditioning").get<std::string>()),
                                a.at("sigma_data").get<double>());
}

std::unique_ptr<distill::Generator> generator_from_checkpoint(const Checkpoint& c) {
    if (c.kind == "mlp_generator")
        return std::make_unique<distill::MlpGenerator>(net_from(c.architecture.at("net"), c.tensors));
    if (c.kind == "denoiser_generator")
        return std::make_unique<distill::DenoiserGenerator>(denoiser_from_checkpoint(c),
                                                            c.architecture.at("t_star").get<double>());
    throw CheckpointError("checkpoint holds a " + c.kind + ", not a generator");
}

} // namespace sim::harness
