#include "glann/module_io.hpp"

#include <algorithm>

#include "glann/errors.hpp"

namespace glann {

void add_module_tensors(Checkpoint& ck, const std::string& prefix,
                        const std::vector<nn::ParamRef>& tensors) {
  for (const auto& p : tensors) ck.add(prefix + "/" + p.name, *p.value);
}

void copy_module_tensors(const Checkpoint& ck, const std::string& prefix,
                         const std::vector<nn::ParamRef>& tensors) {
  for (const auto& p : tensors) {
    const Tensor& stored = ck.get(prefix + "/" + p.name);
    if (!stored.same_shape(*p.value))
      throw StateError("checkpoint tensor " + prefix + "/" + p.name + " has shape " +
                       stored.shape_string() + ", module expects " + p.value->shape_string());
    std::copy(stored.data(), stored.data() + stored.numel(), p.value->data());
  }
}

}  // namespace glann
