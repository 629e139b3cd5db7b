#pragma once

// Named parameter registry and binary checkpoint format.
//
// Checkpoint layout (little-endian): magic "MTPC", version u32, entry count
// u32, then per entry: name length u32, UTF-8 name bytes, rank u32, dims u32
// each, float32 payload. Registries iterate in name order, so save/load and
// optimizer sweeps are deterministic.

#include <map>
#include <string>

#include "apa/nn/tensor.hpp"

namespace apa::nn {

using Tensor = TensorT<float>;
using Registry = std::map<std::string, TensorPtr<float>>;

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const Registry& registry, const std::string& path);
Registry load_checkpoint(const std::string& path);

// Marks every registry tensor as a trainable leaf.
inline void require_grads(Registry& registry) {
    for (auto& [name, t] : registry) {
        t->requires_grad = true;
        t->ensure_grad();
    }
}

inline void zero_grads(Registry& registry) {
    for (auto& [name, t] : registry) t->zero_grad();
}

}  // namespace apa::nn
