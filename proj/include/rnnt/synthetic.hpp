#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rnnt/core.hpp"

namespace rnnt {

/// Desk-scale transduction task: each label is rendered as its one-hot
/// feature vector held for a random number of raw frames, plus noise.
struct SyntheticTaskSpec {
  int num_labels = 20;  // K - 1
  int min_labels = 2;
  int max_labels = 8;
  int min_duration = 2;  // raw frames per label
  int max_duration = 5;
  double noise = 0.1;
  int train_size = 2000;
  int dev_size = 200;
  int test_size = 200;
  std::uint64_t seed = 1;

  Index vocab_size() const { return num_labels + 1; }
  Index feature_dim() const { return num_labels; }
  void validate() const;
};

struct Utterance {
  std::string id;
  Mat features;                 // raw frames x feature_dim
  LabelSeq labels;
  std::vector<Index> ref_frames;  // raw frame where each label's span ends
};

struct Corpus {
  std::vector<Utterance> train;
  std::vector<Utterance> dev;
  std::vector<Utterance> test;
};

/// Deterministic in the spec (seed included). Consecutive labels always
/// differ, so every label boundary is visible in the features.
Corpus gen_synthetic(const SyntheticTaskSpec& spec);

/// Reference frames converted to encoder frames after stacking.
std::vector<Index> stacked_frames(const std::vector<Index>& raw_frames, int stack);

/// Split directory layout: feats/<id>.tkt (TKT1 tensors) and labels.txt with
/// "utt-id<TAB>tok tok ...<TAB>frame frame ..." lines.
void save_split(const std::string& dir, const std::vector<Utterance>& utts);
std::vector<Utterance> load_split(const std::string& dir);
void save_corpus(const std::string& dir, const Corpus& corpus);
Corpus load_corpus(const std::string& dir);

/// "utt-id<TAB>tok tok<TAB>frame frame" lines (the frame column may be absent).
struct TranscriptLine {
  std::string id;
  LabelSeq tokens;
  std::vector<Index> frames;
};
std::vector<TranscriptLine> read_transcripts(const std::string& path);
std::string format_transcript(const TranscriptLine& line);

}  // namespace rnnt
