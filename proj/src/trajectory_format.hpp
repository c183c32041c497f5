#pragma once

#include <cstddef>

#include "binary_io.hpp"
#include "mcdi/weightprep.hpp"

namespace mcdi {

/// Serializes the trajectory layout into `w` (no trailer).
void write_trajectory(io::Writer& w, const Trajectory& traj);

/// Parses the trajectory layout; exactly `trailer_bytes` must follow it.
Trajectory read_trajectory(io::Reader& r, OutputHead head, std::size_t trailer_bytes);

}  // namespace mcdi
