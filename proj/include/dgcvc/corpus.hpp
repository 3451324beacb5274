#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dgcvc/signal.hpp"

namespace dgcvc::corpus {

struct Speaker {
  std::string id;
  std::optional<char> gender;  // 'F' or 'M' when a meta file is present
  std::vector<std::string> utterances;  // wav paths, lexicographic
};

struct Corpus {
  std::string root;
  std::vector<Speaker> speakers;
  // speaker indices; disjoint once make_splits has run (zero-shot contract)
  std::vector<int> train_speakers;
  std::vector<int> heldout_speakers;
  bool has_splits = false;

  int total_utterances() const {
    int n = 0;
    for (const auto& s : speakers) n += static_cast<int>(s.utterances.size());
    return n;
  }
  const Speaker* find_speaker(const std::string& id) const {
    for (const auto& s : speakers)
      if (s.id == id) return &s;
    return nullptr;
  }
};

// Catalog a root/speaker_id/*.wav tree. Ordering is lexicographic on speaker
// ids and file names. An optional one-line root/speaker_id/meta file carries
// the gender tag.
Corpus load_corpus(const std::string& root);

// Seeded random speaker subset for training; the remainder are the zero-shot
// evaluation speakers.
void make_splits(Corpus& c, int n_train_speakers, uint64_t seed);

// Parameters of one synthetic speaker: harmonic source with vibrato and a
// fixed spectral tilt. Ground truth for the metric oracles.
struct ToySpeakerParams {
  double base_f0;
  double tilt_db_per_octave;
  double vibrato_hz;
};
const std::vector<ToySpeakerParams>& toy_speaker_slots();

// 2 s harmonic-plus-noise utterances written as 16-bit mono WAV. Utterance k
// shares its amplitude/intonation contour across speakers, so utterance k of
// speaker B is the parallel rendition of utterance k of speaker A.
Corpus synth_toy_corpus(int n_speakers, int utts_per_speaker, uint64_t seed, const std::string& out_dir);

// The raw samples for one toy utterance (used by tests that want ground
// truth without touching the filesystem).
signal::Waveform synth_toy_utterance(const ToySpeakerParams& spk, uint64_t seed, int utt_index);

}  // namespace dgcvc::corpus
