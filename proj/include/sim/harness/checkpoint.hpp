#pragma once

// Checkpoint files: an 8-byte magic, a little-endian u32 format version, a
// u64 header length, a JSON header and a binary payload of little-endian
// f64 values. The header names every array and where it sits in the
// payload, so values round-trip bit-exactly.

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "sim/distill.hpp"
#include "sim/rng.hpp"

namespace sim::harness {

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct NamedArray {
    std::string name;
    std::vector<std::size_t> shape;
    std::vector<double> values;
};

struct Checkpoint {
    static constexpr std::uint32_t kVersion = 1;

    /// "denoiser", "mlp_generator" or "denoiser_generator".
    std::string kind;
    nlohmann::json architecture;
    std::vector<NamedArray> tensors;
    std::size_t step = 0;
    Rng::State rng{};
    std::string config_hash;
    /// Free-form facts recorded by the producer (e.g. validation loss).
    nlohmann::json meta = nlohmann::json::object();
};

void save_checkpoint(const std::string& path, const Checkpoint& c);
/// Parses the whole file before returning; nothing is returned on error.
Checkpoint load_checkpoint(const std::string& path);

/// Refuses (CheckpointError) when the stored hash differs, unless forced.
void require_config_match(const Checkpoint& c, const std::string& expected_hash, bool force);

Checkpoint to_checkpoint(const distill::NetDenoiser& d);
Checkpoint to_checkpoint(const distill::Generator& g);
distill::NetDenoiser denoiser_from_checkpoint(const Checkpoint& c);
std::unique_ptr<distill::Generator> generator_from_checkpoint(const Checkpoint& c);

} // namespace sim::harness
