#pragma once

#include <map>
#include <string>

#include <json.hpp>

#include "pipetteloc/nn/tensor.hpp"

namespace pipetteloc::nn {

// Versioned checkpoint container: a JSON header (kind, configs, tensor index)
// followed by raw little-endian float32 data.
struct Checkpoint {
    nlohmann::json header;                 // free-form metadata, "kind" required
    std::map<std::string, Tensor> tensors;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace pipetteloc::nn
