#pragma once

#include <string>

#include "dgcvc/asv.hpp"
#include "dgcvc/conversion.hpp"
#include "dgcvc/signal.hpp"
#include "dgcvc/speaker_encoder.hpp"
#include "dgcvc/training.hpp"

namespace dgcvc::config {

// Whole-run configuration, one flat key-value file with sections. Unknown
// keys are rejected. Derived fields (mel width, window length, embedding
// width shared across modules) are wired during validation and are not
// independent keys.
struct RunConfig {
  signal::FeatureConfig features;
  asv::AsvConfig asv;
  spk::SpeakerEncoderConfig spkenc;
  conv::ConversionConfig conversion;
  train::TrainingConfig training;

  // canonical serialized form; hashing this ties every artifact to the
  // configuration that produced it
  std::string canonical() const;
  uint64_t hash() const;

  void validate();

  static RunConfig from_text(const std::string& text);
  static RunConfig from_file(const std::string& path);
};

}  // namespace dgcvc::config
