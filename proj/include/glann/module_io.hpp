#pragma once

#include <string>
#include <vector>

#include "glann/checkpoint.hpp"
#include "glann/nn.hpp"

namespace glann {

// Copy every named tensor of a module (trainable parameters plus running
// statistics) into a checkpoint under "<prefix>/<name>".
void add_module_tensors(Checkpoint& ck, const std::string& prefix,
                        const std::vector<nn::ParamRef>& tensors);

// Inverse: copy checkpoint tensors back into the module, in place. A missing
// name raises MissingTensorError; a shape mismatch raises StateError (the
// checkpoint was written for a differently configured module).
void copy_module_tensors(const Checkpoint& ck, const std::string& prefix,
                         const std::vector<nn::ParamRef>& tensors);

}  // namespace glann
