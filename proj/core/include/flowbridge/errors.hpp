#pragma once

#include <stdexcept>
#include <string>

namespace flowbridge {

/// Invalid configuration, schema violation or malformed input file.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Three seed points (nearly) collinear; no NERF frame can be built.
class DegenerateFrameError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite state encountered while integrating a trajectory.
class IntegrationDivergedError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Training loss exceeded the divergence threshold.
class TrainingDivergedError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Checkpoint architecture incompatible with the requested task.
class CheckpointMismatchError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace flowbridge
