#pragma once

#include <stdexcept>
#include <string>

namespace uavba {

// Base class for all library errors.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// geometry
struct PointBehindCamera : Error {
  explicit PointBehindCamera(const std::string& msg = "point behind camera") : Error(msg) {}
};
struct NonPositiveDepth : Error {
  explicit NonPositiveDepth(const std::string& msg = "depth must be positive") : Error(msg) {}
};

// terrain
struct OutOfExtent : Error {
  explicit OutOfExtent(const std::string& msg = "query outside raster extent") : Error(msg) {}
};
struct NoDataCell : Error {
  explicit NoDataCell(const std::string& msg = "nodata cell in interpolation stencil") : Error(msg) {}
};
struct NoIntersection : Error {
  explicit NoIntersection(const std::string& msg = "ray exits raster without hitting terrain") : Error(msg) {}
};
struct CornerMiss : Error {
  int corner_index;
  explicit CornerMiss(int index)
      : Error("footprint corner ray " + std::to_string(index) + " misses the terrain"),
        corner_index(index) {}
};
struct DegenerateFootprint : Error {
  explicit DegenerateFootprint(const std::string& msg = "degenerate footprint") : Error(msg) {}
};

// patch_tracker
struct GridDoesNotFit : Error {
  explicit GridDoesNotFit(const std::string& msg = "patch grid does not fit in image") : Error(msg) {}
};
struct NoOverlap : Error {
  explicit NoOverlap(const std::string& msg = "footprints do not overlap") : Error(msg) {}
};

// ba_solver
struct DegenerateBaseline : Error {
  explicit DegenerateBaseline(const std::string& msg = "baseline too small to triangulate") : Error(msg) {}
};
struct BehindCamera : Error {
  explicit BehindCamera(const std::string& msg = "triangulated point behind a camera") : Error(msg) {}
};
struct NumericalFailure : Error {
  explicit NumericalFailure(const std::string& msg = "non-finite cost encountered") : Error(msg) {}
};
struct RegistrationFailure : Error {
  explicit RegistrationFailure(const std::string& msg = "too few shared tracks to register image") : Error(msg) {}
};

// cluster_manager
struct InsufficientImages : Error {
  explicit InsufficientImages(const std::string& msg = "fewer images than cluster size") : Error(msg) {}
};
struct MissingPose : Error {
  explicit MissingPose(const std::string& msg = "pose missing from previous cluster result") : Error(msg) {}
};
struct AntipodalRotations : Error {
  explicit AntipodalRotations(const std::string& msg = "rotations too far apart to fuse") : Error(msg) {}
};

// mission_sim
struct NonPositiveParameter : Error {
  explicit NonPositiveParameter(const std::string& msg = "parameter must be positive") : Error(msg) {}
};
struct NonPositiveVelocity : Error {
  explicit NonPositiveVelocity(const std::string& msg = "velocity must be positive") : Error(msg) {}
};
struct InvalidPlan : Error {
  explicit InvalidPlan(const std::string& msg = "invalid flight plan") : Error(msg) {}
};
struct IdMismatch : Error {
  explicit IdMismatch(const std::string& msg = "result image ids do not match mission") : Error(msg) {}
};

// I/O and configuration
struct IoError : Error {
  explicit IoError(const std::string& msg) : Error(msg) {}
};
struct ConfigError : Error {
  explicit ConfigError(const std::string& msg) : Error(msg) {}
};

}  // namespace uavba
