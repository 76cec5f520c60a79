#pragma once

#include "difflab/autodiff/tape.hpp"

namespace difflab::ad::detail {

void register_builtin_primitives(Registry& registry);

}  // namespace difflab::ad::detail
