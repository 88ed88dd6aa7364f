#include "rnnt/synthetic.hpp"

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>

namespace rnnt {

namespace fs = std::filesystem;

void SyntheticTaskSpec::validate() const {
  require(num_labels >= 2, "synthetic task needs K >= 3 (at least two labels)");
  require(min_labels >= 1 && min_labels <= max_labels, "label count range is empty");
  require(min_duration >= 1 && min_duration <= max_duration, "duration range is empty");
  require(noise >= 0, "noise must be >= 0");
  require(train_size >= 0 && dev_size >= 0 && test_size >= 0, "corpus sizes must be >= 0");
}

namespace {

std::vector<Utterance> generate(const SyntheticTaskSpec& spec, int count, const std::string& prefix,
                                std::mt19937_64& rng) {
  std::uniform_int_distribution<int> length(spec.min_labels, spec.max_labels);
  std::uniform_int_distribution<int> duration(spec.min_duration, spec.max_duration);
  std::uniform_int_distribution<int> label(1, spec.num_labels);
  std::uniform_int_distribution<int> other(1, spec.num_labels - 1);
  std::normal_distribution<double> gauss(0.0, 1.0);

  std::vector<Utterance> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    Utterance u;
    std::ostringstream id;
    id << prefix << '-' << std::setw(5) << std::setfill('0') << i;
    u.id = id.str();
    const int n = length(rng);
    std::vector<int> durations;
    for (int k = 0; k < n; ++k) {
      int y;
      if (u.labels.empty()) {
        y = label(rng);
      } else {
        // Uniform over the labels that differ from the previous one.
        y = other(rng);
        if (y >= u.labels.back()) ++y;
      }
      u.labels.push_back(y);
      durations.push_back(duration(rng));
    }
    Index frames = 0;
    for (int d : durations) frames += d;
    u.features = Mat::Zero(frames, spec.feature_dim());
    Index t = 0;
    for (int k = 0; k < n; ++k) {
      for (int d = 0; d < durations[static_cast<std::size_t>(k)]; ++d, ++t)
        u.features(t, u.labels[static_cast<std::size_t>(k)] - 1) = 1;
      u.ref_frames.push_back(t - 1);
    }
    if (spec.noise > 0) {
      for (Index r = 0; r < u.features.rows(); ++r)
        for (Index c = 0; c < u.features.cols(); ++c)
          u.features(r, c) += static_cast<Real>(spec.noise * gauss(rng));
    }
    out.push_back(std::move(u));
  }
  return out;
}

}  // namespace

Corpus gen_synthetic(const SyntheticTaskSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  Corpus c;
  c.train = generate(spec, spec.train_size, "train", rng);
  c.dev = generate(spec, spec.dev_size, "dev", rng);
  c.test = generate(spec, spec.test_size, "test", rng);
  return c;
}

std::vector<Index> stacked_frames(const std::vector<Index>& raw_frames, int stack) {
  require(stack >= 1, "stack must be >= 1");
  std::vector<Index> out;
  out.reserve(raw_frames.size());
  for (Index f : raw_frames) out.push_back(f / stack);
  return out;
}

std::string format_transcript(const TranscriptLine& line) {
  std::ostringstream os;
  os << line.id << '\t';
  for (std::size_t i = 0; i < line.tokens.size(); ++i) os << (i ? " " : "") << line.tokens[i];
  os << '\t';
  for (std::size_t i = 0; i < line.frames.size(); ++i) os << (i ? " " : "") << line.frames[i];
  return os.str();
}

std::vector<TranscriptLine> read_transcripts(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::vector<TranscriptLine> lines;
  std::string raw;
  std::size_t lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    if (raw.empty() || raw[0] == '#') continue;
    std::vector<std::string> cols;
    std::size_t start = 0;
    while (true) {
      const auto tab = raw.find('\t', start);
      cols.push_back(raw.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (lines.empty() && cols[0] == "utt") continue;  // column header
    if (cols.size() < 2 || cols[0].empty())
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": expected utt-id<TAB>tokens");
    TranscriptLine t;
    t.id = cols[0];
    std::istringstream toks(cols[1]);
    for (int v; toks >> v;) t.tokens.push_back(v);
    if (cols.size() >= 3) {
      std::istringstream frames(cols[2]);
      for (Index v; frames >> v;) t.frames.push_back(v);
    }
    lines.push_back(std::move(t));
  }
  return lines;
}

void save_split(const std::string& dir, const std::vector<Utterance>& utts) {
  fs::create_directories(fs::path(dir) / "feats");
  std::ofstream labels(fs::path(dir) / "labels.txt");
  if (!labels) throw std::runtime_error("cannot write labels in " + dir);
  for (const auto& u : utts) {
    save_tensor((fs::path(dir) / "feats" / (u.id + ".tkt")).string(), Tensor::from_matrix(u.features));
    labels << format_transcript({u.id, u.labels, u.ref_frames}) << '\n';
  }
}

std::vector<Utterance> load_split(const std::string& dir) {
  std::vector<Utterance> out;
  for (auto& line : read_transcripts((fs::path(dir) / "labels.txt").string())) {
    Utterance u;
    u.id = line.id;
    u.labels = std::move(line.tokens);
    u.ref_frames = std::move(line.frames);
    u.features = load_tensor((fs::path(dir) / "feats" / (u.id + ".tkt")).string()).to_matrix();
    out.push_back(std::move(u));
  }
  return out;
}

void save_corpus(const std::string& dir, const Corpus& corpus) {
  save_split((fs::path(dir) / "train").string(), corpus.train);
  save_split((fs::path(dir) / "dev").string(), corpus.dev);
  save_split((fs::path(dir) / "test").string(), corpus.test);
}

Corpus load_corpus(const std::string& dir) {
  Corpus c;
  c.train = load_split((fs::path(dir) / "train").string());
  c.dev = load_split((fs::path(dir) / "dev").string());
  c.test = load_split((fs::path(dir) / "test").string());
  return c;
}

}  // namespace rnnt
