#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "rnvkit/hash.hpp"
#include "rnvkit/nn/layers.hpp"
#include "rnvkit/volume.hpp"

// Checkpoint container:
//   bytes 0-7   magic "RNVCKPT1"
//   bytes 8-15  uint64 LE length L of the JSON header
//   next L      UTF-8 JSON header {model, config, layers, params:[{name, shape}],
//               payload_bytes, checksum}
//   remainder   float64 LE parameter values, parameters in header order
// The checksum is FNV-1a 64 over the payload, as 16 hex digits.

namespace rnvkit::nn {

struct Checkpoint {
    nlohmann::json header;
    std::vector<std::pair<std::string, Tensor<double>>> params;

    const std::string& model() const { return header.at("model").get_ref<const std::string&>(); }
    const nlohmann::json& config() const { return header.at("config"); }
};

template <class T>
std::string encode_checkpoint(const std::string& model, const nlohmann::json& config,
                              const std::vector<LayerSpec>& layers, const ParamRefs<T>& params)
{
    std::string payload;
    nlohmann::json plist = nlohmann::json::array();
    for (const auto* p : params) {
        const auto& s = p->value.shape();
        plist.push_back({{"name", p->name}, {"shape", {s[0], s[1], s[2], s[3]}}});
        for (std::size_t i = 0; i < p->value.size(); ++i) {
            const auto bits = std::bit_cast<std::uint64_t>(static_cast<double>(p->value[i]));
            for (int b = 0; b < 8; ++b) payload.push_back(static_cast<char>((bits >> (8 * b)) & 0xFFu));
        }
    }
    nlohmann::json header = {{"format", "rnvkit-checkpoint"},
                             {"version", 1},
                             {"model", model},
                             {"config", config},
                             {"layers", layers},
                             {"params", plist},
                             {"payload_bytes", payload.size()},
                             {"checksum", hex64(fnv1a64(payload))}};
    const std::string hdr = header.dump();
    std::string out = "RNVCKPT1";
    const auto len = static_cast<std::uint64_t>(hdr.size());
    for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((len >> (8 * b)) & 0xFFu));
    out += hdr;
    out += payload;
    return out;
}

inline Checkpoint decode_checkpoint(const std::string& bytes)
{
    if (bytes.size() < 16 || bytes.compare(0, 8, "RNVCKPT1") != 0) throw FormatError("checkpoint: bad magic");
    std::uint64_t len = 0;
    for (int b = 0; b < 8; ++b) len |= std::uint64_t(static_cast<unsigned char>(bytes[8 + b])) << (8 * b);
    if (len > bytes.size() - 16) throw FormatError("checkpoint: truncated header");
    Checkpoint ck;
    try {
        ck.header = nlohmann::json::parse(bytes.substr(16, len));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("checkpoint: malformed header: ") + e.what());
    }
    const std::string_view payload(bytes.data() + 16 + len, bytes.size() - 16 - len);
    if (payload.size() != ck.header.at("payload_bytes").get<std::size_t>())
        throw FormatError("checkpoint: payload size mismatch");
    if (hex64(fnv1a64(payload)) != ck.header.at("checksum").get<std::string>())
        throw FormatError("checkpoint: checksum mismatch");
    std::size_t off = 0;
    for (const auto& p : ck.header.at("params")) {
        const auto sh = p.at("shape").get<std::vector<int>>();
        if (sh.size() != 4) throw FormatError("checkpoint: parameter shape must be 4D");
        Tensor<double> t(Shape{sh[0], sh[1], sh[2], sh[3]});
        if (off + t.size() * 8 > payload.size()) throw FormatError("checkpoint: payload too short");
        for (std::size_t i = 0; i < t.size(); ++i, off += 8) {
            std::uint64_t bits = 0;
            for (int b = 0; b < 8; ++b) bits |= std::uint64_t(static_cast<unsigned char>(payload[off + b])) << (8 * b);
            t[i] = std::bit_cast<double>(bits);
        }
        ck.params.emplace_back(p.at("name").get<std::string>(), std::move(t));
    }
    if (off != payload.size()) throw FormatError("checkpoint: trailing payload bytes");
    return ck;
}

template <class T>
void save_checkpoint(const std::filesystem::path& path, const std::string& model, const nlohmann::json& config,
                     const std::vector<LayerSpec>& layers, const ParamRefs<T>& params)
{
    rnvkit::detail::write_file_bytes(path, encode_checkpoint(model, config, layers, params));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path)
{
    return decode_checkpoint(rnvkit::detail::read_file_bytes(path));
}

/// Copies checkpoint values into a freshly built model's parameters, checking
/// names and shapes.
template <class T>
void assign_parameters(const Checkpoint& ck, const ParamRefs<T>& params)
{
    if (ck.params.size() != params.size()) throw FormatError("checkpoint: parameter count does not match model");
    for (std::size_t k = 0; k < params.size(); ++k) {
        const auto& [name, t] = ck.params[k];
        if (name != params[k]->name) throw FormatError("checkpoint: expected parameter " + params[k]->name + ", found " + name);
        if (t.shape() != params[k]->value.shape()) throw FormatError("checkpoint: shape mismatch for " + name);
        params[k]->value = t.template cast<T>();
    }
}

} // namespace rnvkit::nn
