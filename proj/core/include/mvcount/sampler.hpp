#pragma once

#include "mvcount/geometry.hpp"
#include "mvcount/map2d.hpp"

namespace mvcount {

// Bilinear resampling of every channel of `source` at the field's coordinates.
// Reads outside the source are zero. Invalid target cells hold 0 and are masked invalid.
// Throws when the source tag or size disagrees with the field.
Map2D sample(const Map2D& source, const CorrespondenceField& field);

// Exact transpose of sample(): scatters a target-grid gradient back onto the source grid.
Map2D sample_adjoint(const Map2D& upstream, const CorrespondenceField& field);

}  // namespace mvcount
