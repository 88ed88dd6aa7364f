// rnnt: command-line driver for the toolkit.
//
// Every subcommand writes tab-separated results to stdout, led by a
// "# schema: v1" line, and human-readable progress to stderr.
// Exit codes: 0 success, 1 usage error, 2 runtime failure.

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

#include "rnnt/experiment.hpp"

namespace fs = std::filesystem;
using namespace rnnt;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void schema(std::ostream& out) { out << "# schema: v1\n"; }

std::string fixed(double v, int digits = 4) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

template <class T>
std::vector<T> parse_list(const std::string& text, const std::string& flag) {
  std::vector<T> out;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) {
    std::istringstream is(item);
    T v{};
    if (!(is >> v) || !(is >> std::ws).eof()) throw UsageError(flag + ": bad list item '" + item + "'");
    out.push_back(v);
  }
  if (out.empty()) throw UsageError(flag + ": empty list");
  return out;
}

/// Byte counts with optional K/M/G/T suffix (powers of 1024).
std::uint64_t parse_bytes(const std::string& text) {
  std::size_t pos = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(text, &pos);
  } catch (const std::exception&) {
    throw UsageError("--budget-bytes: bad value '" + text + "'");
  }
  const std::string suffix = text.substr(pos);
  int shift = 0;
  if (suffix == "K") shift = 10;
  else if (suffix == "M") shift = 20;
  else if (suffix == "G") shift = 30;
  else if (suffix == "T") shift = 40;
  else if (!suffix.empty()) throw UsageError("--budget-bytes: bad suffix '" + suffix + "'");
  return static_cast<std::uint64_t>(v) << shift;
}

LengthDistribution read_distribution(const std::string& arg) {
  if (arg == "builtin") return LengthDistribution::builtin();
  if (arg.rfind("equal:", 0) == 0) {
    const auto v = parse_list<Index>(arg.substr(6), "--dist");
    if (v.size() != 2) throw UsageError("--dist equal:T,U needs two numbers");
    return LengthDistribution::equal(v[0], v[1]);
  }
  std::ifstream in(arg);
  if (!in) throw std::runtime_error("cannot open length distribution " + arg);
  LengthDistribution d;
  std::string line;
  for (std::size_t n = 1; std::getline(in, line); ++n) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream is(line);
    Index t = 0, u = 0;
    if (!(is >> t >> u) || t < 1 || u < 0) throw std::runtime_error(arg + ":" + std::to_string(n) + ": expected 'T U'");
    d.samples.emplace_back(t, u);
  }
  if (d.samples.empty()) throw std::runtime_error(arg + ": no lengths");
  return d;
}

/// Config problems are usage errors.
RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides = {}) {
  try {
    KeyValueConfig kv = KeyValueConfig::load(path);
    for (const auto& o : overrides) kv.apply_override(o);
    return run_config_from(kv);
  } catch (const ContractError& e) {
    throw UsageError(e.what());
  }
}

int cmd_gen(const std::string& spec_path, const std::string& out_dir) {
  const RunConfig cfg = load_run_config(spec_path);
  const Corpus c = gen_synthetic(cfg.task);
  save_corpus(out_dir, c);
  std::cerr << "wrote corpus to " << out_dir << "\n";
  schema(std::cout);
  std::cout << "split\tutterances\ttokens\tframes\n";
  for (const auto& [name, split] : {std::pair{"train", &c.train}, {"dev", &c.dev}, {"test", &c.test}}) {
    std::size_t tokens = 0, frames = 0;
    for (const auto& u : *split) {
      tokens += u.labels.size();
      frames += static_cast<std::size_t>(u.features.rows());
    }
    std::cout << name << "\t" << split->size() << "\t" << tokens << "\t" << frames << "\n";
  }
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& out_dir, const std::vector<std::string>& overrides) {
  const RunConfig cfg = load_run_config(config_path, overrides);
  fs::create_directories(out_dir);
  const fs::path out(out_dir);
  {
    std::ofstream dump(out / "config.conf");
    dump << to_key_values(cfg).dump();
  }
  const Corpus corpus = load_or_generate(cfg);
  std::cerr << "train " << corpus.train.size() << " utterances, dev " << corpus.dev.size() << ", "
            << to_string(cfg.model.encoder.kind) << " encoder x" << cfg.model.encoder.num_layers << "\n";

  std::ofstream steps(out / "train_log.tsv");
  steps << "step\tepoch\tloss\tgrad_norm\n";
  TrainHooks hooks;
  hooks.on_step = [&](const StepLog& s) {
    steps << s.step << "\t" << s.epoch << "\t" << s.loss << "\t" << s.grad_norm << "\n";
  };
  hooks.on_epoch = [&](const EpochLog& e) {
    std::cerr << "epoch " << e.epoch << " loss " << fixed(e.mean_loss) << " dev token error "
              << fixed(e.dev_token_error) << "\n";
  };
  const TrainedModel tm = train_from_config(cfg, corpus, hooks);
  save_checkpoint((out / "model.ckpt").string(), *tm.model, tm.steps, tm.rng_state);

  const EvalResult test = evaluate(*tm.model, corpus.test, cfg.decode);
  {
    std::ofstream m(out / "metrics.tsv");
    schema(m);
    m << "split\ttoken_error\tmean_delay\tsteps\tseconds\n";
    m << "test\t" << fixed(test.token_error()) << "\t" << fixed(test.mean_delay()) << "\t" << tm.steps << "\t"
      << fixed(tm.seconds, 1) << "\n";
  }
  std::cerr << "test token error " << fixed(test.token_error()) << " after " << tm.steps << " steps, "
            << fixed(tm.seconds, 1) << " s\n";

  schema(std::cout);
  std::cout << "epoch\tmean_loss\tdev_token_error\n";
  for (const auto& e : tm.epochs)
    std::cout << e.epoch << "\t" << fixed(e.mean_loss, 6) << "\t" << fixed(e.dev_token_error) << "\n";
  return 0;
}

int cmd_decode(const std::string& ckpt, const std::string& data, const std::string& mode, int beam_width,
               int max_symbols) {
  const Checkpoint ck = load_checkpoint(ckpt);
  DecodeConfig dc;
  dc.mode = parse_decode_mode(mode);
  dc.beam_width = beam_width;
  dc.max_symbols_per_frame = max_symbols;
  dc.validate();
  const std::vector<Utterance> utts = load_split(data);
  schema(std::cout);
  std::cout << "utt\ttokens\tframes\n";
  for (const auto& u : utts) {
    const Hypothesis h = decode(ck.model->encode(u.features), *ck.model, dc);
    std::cout << format_transcript({u.id, h.tokens, h.emit_frames}) << "\n";
  }
  std::cerr << "decoded " << utts.size() << " utterances\n";
  return 0;
}

std::map<std::string, TranscriptLine> by_id(const std::vector<TranscriptLine>& lines, const std::string& path) {
  std::map<std::string, TranscriptLine> m;
  for (const auto& l : lines)
    if (!m.emplace(l.id, l).second) throw std::runtime_error(path + ": duplicate utterance " + l.id);
  return m;
}

int cmd_score(const std::string& hyp_path, const std::string& ref_path) {
  const auto hyps = by_id(read_transcripts(hyp_path), hyp_path);
  ErrorCounts total;
  std::size_t missing = 0;
  for (const auto& ref : read_transcripts(ref_path)) {
    const auto it = hyps.find(ref.id);
    if (it == hyps.end()) ++missing;
    total += edit_distance_wer(it == hyps.end() ? LabelSeq{} : it->second.tokens, ref.tokens);
  }
  if (missing) std::cerr << missing << " reference utterances have no hypothesis; scored as empty\n";
  schema(std::cout);
  std::cout << "WER\t" << fixed(total.wer()) << "\n"
            << "substitutions\t" << total.substitutions << "\n"
            << "insertions\t" << total.insertions << "\n"
            << "deletions\t" << total.deletions << "\n"
            << "ref_tokens\t" << total.ref_length << "\n";
  return 0;
}

int cmd_bench_mem(const std::string& ks, const std::string& budgets, const std::string& layout,
                  const std::string& variant, const std::string& dist_arg, Index joint_dim, int bytes) {
  const auto vocab = parse_list<Index>(ks, "--k");
  std::vector<std::uint64_t> budget_list;
  {
    std::stringstream ss(budgets);
    for (std::string item; std::getline(ss, item, ',');) budget_list.push_back(parse_bytes(item));
  }
  std::vector<Layout> layouts;
  if (layout == "all") layouts = {Layout::packed, Layout::broadcast};
  else layouts = {parse_layout(layout)};
  std::vector<LossVariant> variants;
  if (variant == "all") variants = {LossVariant::merged, LossVariant::chain_rule};
  else variants = {parse_loss_variant(variant)};
  const LengthDistribution dist = read_distribution(dist_arg);

  schema(std::cout);
  std::cout << "K\tbudget_bytes\tloss_variant";
  for (Layout l : layouts) std::cout << "\t" << to_string(l);
  std::cout << "\n";
  for (Index k : vocab)
    for (std::uint64_t b : budget_list)
      for (LossVariant v : variants) {
        std::cout << k << "\t" << b << "\t" << to_string(v);
        for (Layout l : layouts) {
          MaxBatchQuery q;
          q.joint_dim = joint_dim;
          q.vocab_size = k;
          q.bytes_per_scalar = static_cast<std::size_t>(bytes);
          q.budget_bytes = b;
          q.layout = l;
          q.variant = v;
          std::cout << "\t" << max_batch(dist, q);
        }
        std::cout << "\n";
      }
  return 0;
}

int cmd_align_delay(const std::string& hyp_path, const std::string& ref_path, int stack, int layers, int tau,
                    double frame_ms) {
  const auto hyps = by_id(read_transcripts(hyp_path), hyp_path);
  double sum = 0;
  std::size_t matched = 0, skipped = 0;
  for (const auto& ref : read_transcripts(ref_path)) {
    const auto it = hyps.find(ref.id);
    if (it == hyps.end()) {
      ++skipped;
      continue;
    }
    const TranscriptLine& h = it->second;
    if (h.frames.size() != h.tokens.size()) throw std::runtime_error(hyp_path + ": " + h.id + " lacks emission frames");
    if (ref.frames.size() != ref.tokens.size()) throw std::runtime_error(ref_path + ": " + ref.id + " lacks reference frames");
    const auto ref_frames = stacked_frames(ref.frames, stack);
    for (auto [hi, ri] : matched_tokens(h.tokens, ref.tokens)) {
      sum += static_cast<double>(h.frames[hi] - ref_frames[ri]);
      ++matched;
    }
  }
  if (skipped) std::cerr << skipped << " reference utterances have no hypothesis\n";
  if (!matched) throw std::runtime_error("no matched tokens; alignment delay undefined");
  const double mean = sum / static_cast<double>(matched);
  schema(std::cout);
  std::cout << "mean_delay_frames\t" << fixed(mean) << "\n"
            << "matched_tokens\t" << matched << "\n";
  if (layers > 0) std::cout << "latency_ms\t" << fixed(reported_latency_ms(layers, tau, mean, frame_ms), 1) << "\n";
  return 0;
}

int cmd_sweep_tau(const std::string& config_path, const std::string& taus, const std::string& seeds, int workers,
                  const std::vector<std::string>& overrides) {
  const RunConfig cfg = load_run_config(config_path, overrides);
  const Corpus corpus = load_or_generate(cfg);
  const auto tau_list = parse_list<int>(taus, "--tau");
  const auto seed_list = parse_list<std::uint64_t>(seeds, "--seeds");
  std::cerr << "sweeping " << tau_list.size() << " tau values x " << seed_list.size() << " seeds on " << workers
            << " workers\n";
  const auto points = sweep_tau(cfg, corpus, tau_list, seed_list, workers);
  schema(std::cout);
  std::cout << "tau\tseed\ttoken_error\tmean_delay\n";
  for (const auto& p : points)
    std::cout << p.tau << "\t" << p.seed << "\t" << fixed(p.token_error) << "\t" << fixed(p.mean_delay) << "\n";
  for (int t : tau_list) {
    double err = 0, delay = 0;
    for (const auto& p : points)
      if (p.tau == t) {
        err += p.token_error;
        delay += p.mean_delay;
      }
    const auto n = static_cast<double>(seed_list.size());
    std::cout << t << "\tmean\t" << fixed(err / n) << "\t" << fixed(delay / n) << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"RNN transducer toolkit"};
  app.require_subcommand(1);

  std::string spec, out, config, ckpt, data, mode = "greedy", hyp, ref, ks = "4096,36000", budgets = "16G";
  std::string layout = "all", variant = "all", dist = "builtin", taus = "0,2,4", seeds = "1,2,3";
  std::vector<std::string> overrides;
  int beam_width = 10, max_symbols = 10, bytes = 4, stack = 1, layers = 0, tau = 0, workers = 1;
  Index joint_dim = 640;
  double frame_ms = 30;

  auto* gen = app.add_subcommand("gen", "Generate the synthetic corpus");
  gen->add_option("--spec", spec, "Config file with a [task] section")->required()->check(CLI::ExistingFile);
  gen->add_option("--out", out, "Output directory")->required();

  auto* train = app.add_subcommand("train", "Train a model");
  train->add_option("--config", config, "Config file")->required()->check(CLI::ExistingFile);
  train->add_option("--out", out, "Output directory")->required();
  train->add_option("--set", overrides, "Override, key=value (repeatable)");

  auto* dec = app.add_subcommand("decode", "Decode a corpus split with a checkpoint");
  dec->add_option("--ckpt", ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  dec->add_option("--data", data, "Split directory (labels.txt, feats/)")->required()->check(CLI::ExistingDirectory);
  dec->add_option("--mode", mode, "greedy or beam")->check(CLI::IsMember({"greedy", "beam"}));
  dec->add_option("--beam-width", beam_width, "Beam width");
  dec->add_option("--max-symbols", max_symbols, "Emission cap per frame");

  auto* score = app.add_subcommand("score", "Token error rate of hypotheses against references");
  score->add_option("--hyp", hyp, "Hypothesis transcripts")->required()->check(CLI::ExistingFile);
  score->add_option("--ref", ref, "Reference transcripts")->required()->check(CLI::ExistingFile);

  auto* bench = app.add_subcommand("bench-mem", "Modeled max batch size per layout and loss variant");
  bench->add_option("--k", ks, "Vocabulary sizes, comma separated");
  bench->add_option("--budget-bytes", budgets, "Budgets, comma separated, optional K/M/G/T suffix");
  bench->add_option("--layout", layout, "packed, broadcast or all")->check(CLI::IsMember({"packed", "broadcast", "all"}));
  bench->add_option("--loss-variant", variant, "merged, chain_rule or all")
      ->check(CLI::IsMember({"merged", "chain_rule", "all"}));
  bench->add_option("--dist", dist, "builtin, equal:T,U or a file of 'T U' lines");
  bench->add_option("--joint-dim", joint_dim, "Joint width D");
  bench->add_option("--bytes", bytes, "Bytes per scalar")->check(CLI::PositiveNumber);

  auto* align = app.add_subcommand("align-delay", "Mean emission delay over matched tokens");
  align->add_option("--hyp-with-frames", hyp, "Hypotheses with emission frames")->required()->check(CLI::ExistingFile);
  align->add_option("--ref-frames", ref, "References with boundary frames")->required()->check(CLI::ExistingFile);
  align->add_option("--stack", stack, "Frame stacking applied to reference frames")->check(CLI::PositiveNumber);
  align->add_option("--layers", layers, "Encoder layers, to report latency");
  align->add_option("--tau", tau, "Lookahead per layer, to report latency");
  align->add_option("--frame-ms", frame_ms, "Encoder frame duration");

  auto* sweep = app.add_subcommand("sweep-tau", "Train and score across lookahead values");
  sweep->add_option("--config", config, "Config file")->required()->check(CLI::ExistingFile);
  sweep->add_option("--tau", taus, "Lookahead values, comma separated");
  sweep->add_option("--seeds", seeds, "Seeds, comma separated");
  sweep->add_option("--workers", workers, "Worker threads")->check(CLI::PositiveNumber);
  sweep->add_option("--set", overrides, "Override, key=value (repeatable)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (*gen) return cmd_gen(spec, out);
    if (*train) return cmd_train(config, out, overrides);
    if (*dec) return cmd_decode(ckpt, data, mode, beam_width, max_symbols);
    if (*score) return cmd_score(hyp, ref);
    if (*bench) return cmd_bench_mem(ks, budgets, layout, variant, dist, joint_dim, bytes);
    if (*align) return cmd_align_delay(hyp, ref, stack, layers, tau, frame_ms);
    if (*sweep) return cmd_sweep_tau(config, taus, seeds, workers, overrides);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
