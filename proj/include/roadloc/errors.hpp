#pragma once

#include <stdexcept>
#include <string>

namespace roadloc {

// Base class for every error the library throws on purpose.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

#define ROADLOC_ERROR_TYPE(Name, default_msg)                 \
  struct Name : Error {                                       \
    Name() : Error(default_msg) {}                            \
    explicit Name(const std::string& msg) : Error(msg) {}     \
  };

// geometry
ROADLOC_ERROR_TYPE(CoincidentPoints, "points are projectively equal")
ROADLOC_ERROR_TYPE(DegeneratePencil, "line pencil has rank < 2")
ROADLOC_ERROR_TYPE(SingularHomography, "homography matrix is singular")
ROADLOC_ERROR_TYPE(NotConcurrent, "lines do not pass through the given vertex")
ROADLOC_ERROR_TYPE(DuplicateLines, "two lines of the pencil coincide")
ROADLOC_ERROR_TYPE(InsufficientLines, "need at least 4 line correspondences")
ROADLOC_ERROR_TYPE(DegenerateConfiguration, "line configuration does not determine a homography")
ROADLOC_ERROR_TYPE(PointAtInfinity, "point cannot be dehomogenized")
ROADLOC_ERROR_TYPE(LineAtInfinity, "line has no finite direction")

// skeleton
ROADLOC_ERROR_TYPE(TooFewPoints, "not enough points for a line fit")

// refindex
ROADLOC_ERROR_TYPE(EmptyMap, "vector map contains no usable polylines")
ROADLOC_ERROR_TYPE(NoTuples, "no admissible intersection tuples")
ROADLOC_ERROR_TYPE(CorruptFile, "index file is corrupt")
ROADLOC_ERROR_TYPE(IoFailure, "file i/o failed")

// matcher
ROADLOC_ERROR_TYPE(NotEnoughIntersections, "query has fewer intersections than required")
ROADLOC_ERROR_TYPE(EmptyIndex, "reference index is empty")
ROADLOC_ERROR_TYPE(DegeneratePrior, "query budget undefined for this prior")

// synth
ROADLOC_ERROR_TYPE(SceneTooSparse, "scene does not contain enough intersections")

#undef ROADLOC_ERROR_TYPE

}  // namespace roadloc
