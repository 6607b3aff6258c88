#include "pfdfl/params.hpp"

#include <algorithm>

#include "pfdfl/errors.hpp"

namespace pfdfl {

void copy_values(const ParamList& src, const ParamList& dst) {
  if (src.size() != dst.size()) throw DimensionError("copy_values: parameter lists differ in length");
  for (std::size_t i = 0; i < src.size(); ++i) {
    if (src[i].tensor.shape() != dst[i].tensor.shape()) {
      throw DimensionError("copy_values: shape mismatch for " + dst[i].name);
    }
    Tensor d = dst[i].tensor;
    std::copy(src[i].tensor.data().begin(), src[i].tensor.data().end(), d.data().begin());
  }
}

}  // namespace pfdfl
