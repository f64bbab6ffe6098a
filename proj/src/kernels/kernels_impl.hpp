#pragma once

#include "sahgnn/kernels.hpp"

namespace sahgnn::kernels::detail {

// Defined in the per-ISA translation units; each returns nullptr when the
// ISA was not compiled in.
const KernelTable* avx2_table_if_built();
const KernelTable* neon_table_if_built();

}  // namespace sahgnn::kernels::detail
