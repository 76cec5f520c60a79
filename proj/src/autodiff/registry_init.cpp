#include "registry_init.hpp"

#include "difflab/autodiff/ops.hpp"
#include "difflab/conv/conv.hpp"
#include "difflab/recurrent/recurrent.hpp"

namespace difflab::ad::detail {

void register_builtin_primitives(Registry& registry) {
  for (auto& name : core_primitive_names()) registry.add(name);
  for (auto& name : conv::primitive_names()) registry.add(name);
  for (auto& name : rnn::primitive_names()) registry.add(name);
}

}  // namespace difflab::ad::detail
