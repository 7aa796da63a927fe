#include "cli.hpp"

#include <CLI11.hpp>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <iomanip>
#include <json.hpp>
#include <optional>
#include <ostream>

#include "sentinel/bytes.hpp"
#include "sentinel/dataset.hpp"
#include "sentinel/eval.hpp"
#include "sentinel/forge.hpp"
#include "sentinel/nn/checkpoint.hpp"
#include "sentinel/nn/train.hpp"
#include "sentinel/pcap.hpp"
#include "sentinel/run_config.hpp"

namespace sentinel::cli {
namespace {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using Clock = std::chrono::steady_clock;

// A broken internal invariant, as opposed to bad input.
struct InternalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string format = "bin";
  bool explain = false;
  bool deterministic = false;

  std::vector<std::string> inputs;
  std::string labels;
  std::string held_out;
  std::string init;
  std::string split;
  std::string run_id;
};

struct Input {
  std::string path;
  Bytes bytes;
  std::string sha256;
};

Input read_input(const std::string& path) {
  if (!fs::is_regular_file(path)) throw Error(ErrorCode::Io, "no such file: " + path);
  Input in{path, read_file(path), {}};
  in.sha256 = sha256_hex(in.bytes);
  return in;
}

std::string as_text(const Bytes& b) { return std::string(b.begin(), b.end()); }

void ensure_parent(const std::string& path) {
  const fs::path parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
}

// data.sntd + "train" -> data.train.sntd
std::string tagged(const std::string& path, const std::string& tag) {
  const fs::path p(path);
  return (p.parent_path() / (p.stem().string() + "." + tag + p.extension().string())).string();
}

class Manifest {
 public:
  explicit Manifest(std::string subcommand) : start_(Clock::now()) {
    doc_["subcommand"] = std::move(subcommand);
    doc_["inputs"] = json::object();
    doc_["outputs"] = json::object();
    doc_["seeds"] = json::object();
  }

  void input(const std::string& role, const Input& in) {
    doc_["inputs"][role] = {{"path", in.path}, {"sha256", in.sha256}};
  }
  void output(const std::string& role, const std::string& path, ByteView data) {
    doc_["outputs"][role] = {{"path", path}, {"sha256", sha256_hex(data)}};
  }
  json& operator[](const std::string& key) { return doc_[key]; }

  double elapsed() const { return std::chrono::duration<double>(Clock::now() - start_).count(); }

  void write(const std::string& path) {
    doc_["timings"] = {{"wall_seconds", elapsed()}};
    write_file_atomic(path, doc_.dump(2) + "\n");
  }

 private:
  json doc_;
  Clock::time_point start_;
};

std::string manifest_path(const std::string& out) { return out + ".manifest.json"; }

void write_output(Manifest& m, const std::string& role, const std::string& path, ByteView data) {
  ensure_parent(path);
  write_file_atomic(path, data);
  m.output(role, path, data);
}
void write_output(Manifest& m, const std::string& role, const std::string& path, const std::string& text) {
  write_output(m, role, path, ByteView(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

RunConfig load_run_config(const Options& o, Manifest& m) {
  RunConfig rc = default_run_config(pl1_vocab());
  if (!o.config.empty()) {
    const Input in = read_input(o.config);
    rc = parse_run_config(as_text(in.bytes), pl1_vocab());
    m.input("config", in);
  }
  if (o.seed) rc.seed = *o.seed;
  if (o.deterministic) rc.model.dropout = 0;
  m["config"] = json::parse(run_config_to_json(rc));
  m["seeds"]["seed"] = rc.seed;
  return rc;
}

std::size_t worker_count(const Options& o, Manifest& m) {
  const std::size_t threads = o.deterministic ? 1 : nn::default_threads();
  m["threads"] = threads;
  m["deterministic"] = o.deterministic;
  return threads;
}

TokenDataset read_dataset(const std::string& role, const std::string& path, Manifest& m) {
  const Input in = read_input(path);
  m.input(role, in);
  TokenDataset ds = decode_dataset(in.bytes);
  check_vocab(ds, pl1_vocab());
  return ds;
}

nn::Checkpoint read_checkpoint(const std::string& path, Manifest& m) {
  const Input in = read_input(path);
  m.input("checkpoint", in);
  return nn::load_checkpoint(in.bytes, pl1_vocab().hash());
}

nn::LogSink progress(std::ostream& err, std::string stage) {
  return [&err, stage = std::move(stage)](const nn::LogRow& row) {
    err << stage << " epoch " << row.epoch << " " << row.split << " loss " << std::fixed
        << std::setprecision(4) << row.loss << " accuracy " << row.accuracy << std::defaultfloat << "\n";
  };
}

// ---------------------------------------------------------------------------

int cmd_forge(const Options& o, std::ostream&, std::ostream& err) {
  Manifest m("forge");
  ScenarioConfig cfg = default_scenario();
  if (!o.config.empty()) {
    const Input in = read_input(o.config);
    cfg = parse_scenario(as_text(in.bytes));
    m.input("config", in);
  }
  if (o.seed) cfg.seed = *o.seed;
  validate_config(cfg);
  m["config"] = json::parse(scenario_to_json(cfg));
  m["seeds"]["seed"] = cfg.seed;

  const LabeledCapture lc = forge(cfg);
  const fs::path dir(o.out);
  fs::create_directories(dir);
  write_output(m, "pcap", (dir / "capture.pcap").string(), write_pcap(lc.capture.meta, lc.capture.records));
  write_output(m, "labels", (dir / "labels.jsonl").string(), labels_to_jsonl(lc.labels));
  m["forge"] = json::parse(manifest_to_json(lc.manifest));
  m.write((dir / "manifest.json").string());

  err << "forge: " << lc.capture.records.size() << " records";
  for (auto c : kAllClasses) err << " " << to_string(c) << "=" << lc.manifest.class_counts[index_of(c)];
  err << " -> " << dir.string() << "\n";
  return kExitOk;
}

std::pair<std::size_t, std::size_t> parse_split(const std::string& text) {
  const auto comma = text.find(',');
  try {
    if (comma == std::string::npos) throw std::invalid_argument("");
    std::size_t used = 0;
    const auto a = std::stoull(text.substr(0, comma), &used);
    if (used != comma) throw std::invalid_argument("");
    const std::string rest = text.substr(comma + 1);
    const auto b = std::stoull(rest, &used);
    if (used != rest.size() || a == 0) throw std::invalid_argument("");
    return {a, b};
  } catch (const std::logic_error&) {
    throw Error(ErrorCode::InvalidConfig, "--split: expected TRAIN,TEST records per class, e.g. 4000,1000");
  }
}

Bytes encode_as(const TokenDataset& ds, const std::string& format) {
  if (format == "jsonl") {
    const std::string text = dataset_to_jsonl(ds);
    return Bytes(text.begin(), text.end());
  }
  return encode_dataset(ds);
}

int cmd_tokenize(const Options& o, std::ostream&, std::ostream& err) {
  Manifest m("tokenize");
  const Vocab& vocab = pl1_vocab();
  const Input pcap = read_input(o.inputs.at(0));
  m.input("pcap", pcap);
  const Capture cap = read_pcap(pcap.bytes);

  std::optional<std::vector<RecordLabel>> labels;
  if (!o.labels.empty()) {
    const Input in = read_input(o.labels);
    m.input("labels", in);
    labels = labels_from_jsonl(as_text(in.bytes));
    if (labels->size() != cap.records.size()) {
      throw Error(ErrorCode::BadDataset, "labels file has " + std::to_string(labels->size()) +
                                             " lines, capture has " + std::to_string(cap.records.size()) +
                                             " records");
    }
  }

  const TokenDataset ds = tokenize_capture(cap, labels ? &*labels : nullptr, vocab);
  if (ds.size() != cap.records.size()) throw InternalError("record count changed during tokenization");
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (!is_well_formed(ds.seqs[i], vocab)) {
      throw InternalError("record " + std::to_string(i) + " produced an out-of-vocabulary or malformed sequence");
    }
  }

  m["config"] = {{"format", o.format}, {"split", o.split}, {"vocab_sha256", vocab.hash()}};
  m["records"] = ds.size();
  write_output(m, "dataset", o.out, encode_as(ds, o.format));
  if (!o.split.empty()) {
    const auto [train_n, test_n] = parse_split(o.split);
    const std::uint64_t seed = o.seed.value_or(7);
    m["seeds"]["split"] = seed;
    const Split s = balanced_split(ds, train_n, test_n, seed);
    write_output(m, "train", tagged(o.out, "train"), encode_as(s.train, o.format));
    write_output(m, "test", tagged(o.out, "test"), encode_as(s.test, o.format));
  }
  m.write(manifest_path(o.out));
  err << "tokenize: " << ds.size() << " sequences -> " << o.out << "\n";
  return kExitOk;
}

int cmd_pretrain(const Options& o, std::ostream&, std::ostream& err) {
  Manifest m("pretrain");
  const RunConfig rc = load_run_config(o, m);
  const std::size_t threads = worker_count(o, m);
  const TokenDataset ds = read_dataset("dataset", o.inputs.at(0), m);

  const nn::TrainResult r =
      nn::pretrain(ds.seqs, rc.model, rc.pretrain, rc.seed, {threads, progress(err, "pretrain")});
  write_output(m, "checkpoint", o.out, nn::save_checkpoint(r.model, pl1_vocab().hash()));
  write_output(m, "log", o.out + ".log.csv", nn::log_to_csv(r.log));
  m.write(manifest_path(o.out));
  return kExitOk;
}

int cmd_finetune(const Options& o, std::ostream&, std::ostream& err) {
  Manifest m("finetune");
  const RunConfig rc = load_run_config(o, m);
  const std::size_t threads = worker_count(o, m);
  const TokenDataset train = read_dataset("train", o.inputs.at(0), m);
  const auto train_labels = nn::require_labels(train);
  TokenDataset held;
  std::vector<ThreatClass> held_labels;
  if (!o.held_out.empty()) {
    held = read_dataset("held_out", o.held_out, m);
    held_labels = nn::require_labels(held);
  }

  nn::Model start;
  std::vector<std::string> freeze;
  if (!o.init.empty()) {
    start = read_checkpoint(o.init, m).model;
    if (o.deterministic) start.config.dropout = 0;
    freeze = rc.freeze;
  } else {
    start = nn::init_model(rc.model, rc.seed);
  }
  m["freeze"] = freeze;

  const nn::TrainResult r = nn::finetune(start, {train.seqs, train_labels}, {held.seqs, held_labels}, freeze,
                                         rc.finetune, rc.seed, {threads, progress(err, "finetune")});
  write_output(m, "checkpoint", o.out, nn::save_checkpoint(r.model, pl1_vocab().hash()));
  write_output(m, "log", o.out + ".log.csv", nn::log_to_csv(r.log));
  m.write(manifest_path(o.out));
  return kExitOk;
}

int cmd_classify(const Options& o, std::ostream&, std::ostream& err) {
  Manifest m("classify");
  const std::size_t threads = worker_count(o, m);
  const nn::Checkpoint ck = read_checkpoint(o.inputs.at(0), m);
  const Input pcap = read_input(o.inputs.at(1));
  m.input("pcap", pcap);
  const Capture cap = read_pcap(pcap.bytes);
  const Vocab& vocab = pl1_vocab();
  const TokenDataset ds = tokenize_capture(cap, nullptr, vocab);
  const auto verdicts = nn::predict_all(ck.model, ds.seqs, threads);
  if (verdicts.size() != cap.records.size()) throw InternalError("verdict count differs from record count");

  std::string lines;
  std::array<std::size_t, kClassCount> counts{};
  for (std::size_t i = 0; i < verdicts.size(); ++i) {
    const auto& v = verdicts[i];
    json probs = json::object();
    double sum = 0;
    for (auto c : kAllClasses) {
      probs[std::string(to_string(c))] = v.probs[index_of(c)];
      sum += v.probs[index_of(c)];
    }
    if (std::abs(sum - 1.0) > 1e-9) throw InternalError("class probabilities do not sum to 1");
    json line = {{"index", i},
                 {"ts_us", cap.records[i].timestamp_us()},
                 {"class", to_string(v.cls)},
                 {"probs", probs},
                 {"threat_level", v.threat_level}};
    if (o.explain) line["sentence"] = render_sentence(ds.seqs[i], vocab);
    lines += line.dump() + "\n";
    counts[index_of(v.cls)]++;
  }
  m["config"] = {{"explain", o.explain}};
  m["records"] = verdicts.size();
  write_output(m, "verdicts", o.out, lines);
  m.write(manifest_path(o.out));

  err << "classify: " << verdicts.size() << " verdicts";
  for (auto c : kAllClasses) err << " " << to_string(c) << "=" << counts[index_of(c)];
  err << "\n";
  return kExitOk;
}

int cmd_eval(const Options& o, std::ostream& out, std::ostream&) {
  Manifest m("eval");
  const std::size_t threads = worker_count(o, m);
  const std::string ckpt_path = o.inputs.at(0);
  const nn::Checkpoint ck = read_checkpoint(ckpt_path, m);
  const TokenDataset ds = read_dataset("dataset", o.inputs.at(1), m);
  const auto truth = nn::require_labels(ds);
  const Metrics metrics = evaluate(ck.model, ds.seqs, truth, threads);

  // Training config and time come from the checkpoint's own manifest when present.
  RunRecord rec;
  rec.run_id = o.run_id.empty() ? fs::path(ckpt_path).stem().string() : o.run_id;
  rec.dataset_hash = m["inputs"]["dataset"]["sha256"].get<std::string>();
  rec.metrics = metrics;
  rec.config_digest = sha256_hex(json({{"d_model", ck.model.config.d_model},
                                       {"n_layers", ck.model.config.n_layers},
                                       {"n_heads", ck.model.config.n_heads},
                                       {"d_ff", ck.model.config.d_ff}})
                                     .dump());
  if (fs::is_regular_file(manifest_path(ckpt_path))) {
    const json train = json::parse(as_text(read_file(manifest_path(ckpt_path))), nullptr, false);
    if (train.is_object() && train.contains("config")) rec.config_digest = sha256_hex(train["config"].dump());
    if (train.is_object() && train.contains("timings")) rec.wall_seconds = train["timings"].value("wall_seconds", 0.0);
  }

  out << metrics_to_text(metrics);
  write_output(m, "metrics", o.out, metrics_to_json(metrics));
  m["run_record"] = json::parse(run_record_to_json(rec));
  m.write(manifest_path(o.out));
  return kExitOk;
}

int cmd_compare(const Options& o, std::ostream& out, std::ostream&) {
  Manifest m("compare");
  std::vector<RunRecord> runs;
  for (std::size_t i = 0; i < o.inputs.size(); ++i) {
    const Input in = read_input(o.inputs[i]);
    m.input("run" + std::to_string(i), in);
    const json j = json::parse(as_text(in.bytes), nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw Error(ErrorCode::BadDataset, o.inputs[i] + ": not a JSON object");
    runs.push_back(run_record_from_json(j.contains("run_record") ? j["run_record"].dump() : j.dump()));
  }
  const Comparison c = compare_runs(std::move(runs));
  out << comparison_to_text(c);
  write_output(m, "comparison", o.out, comparison_to_json(c));
  m.write(manifest_path(o.out));
  return kExitOk;
}

}  // namespace

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidConfig:
    case ErrorCode::UnknownFreezeTarget:
    case ErrorCode::Io:
      return kExitUsage;
    default:
      return kExitData;
  }
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Packet threat classification pipeline", "sentinel"};
  app.require_subcommand(1);
  Options o;

  auto out_opt = [&](CLI::App* sub, const std::string& what) {
    sub->add_option("--out", o.out, what)->required();
  };
  auto config_opt = [&](CLI::App* sub, const std::string& what) { sub->add_option("--config", o.config, what); };
  auto seed_opt = [&](CLI::App* sub, const std::string& what) { sub->add_option("--seed", o.seed, what); };
  auto det_opt = [&](CLI::App* sub) {
    sub->add_flag("--deterministic", o.deterministic, "one worker thread and no dropout");
  };

  auto* forge_cmd = app.add_subcommand("forge", "synthesize a labeled capture");
  config_opt(forge_cmd, "scenario JSON (default scenario when omitted)");
  seed_opt(forge_cmd, "overrides the scenario seed");
  out_opt(forge_cmd, "output directory");
  det_opt(forge_cmd);

  auto* tok_cmd = app.add_subcommand("tokenize", "turn a capture into a token dataset");
  tok_cmd->add_option("pcap", o.inputs, "capture file")->required()->expected(1);
  tok_cmd->add_option("--labels", o.labels, "labels JSONL from forge");
  tok_cmd->add_option("--format", o.format, "dataset format")->check(CLI::IsMember({"bin", "jsonl"}));
  tok_cmd->add_option("--split", o.split, "also write balanced TRAIN,TEST per-class splits");
  seed_opt(tok_cmd, "split seed (default 7)");
  out_opt(tok_cmd, "dataset file");
  det_opt(tok_cmd);

  auto* pre_cmd = app.add_subcommand("pretrain", "masked-token pretraining");
  pre_cmd->add_option("dataset", o.inputs, "token dataset")->required()->expected(1);
  config_opt(pre_cmd, "model/training JSON");
  seed_opt(pre_cmd, "overrides the config seed");
  out_opt(pre_cmd, "checkpoint file");
  det_opt(pre_cmd);

  auto* fine_cmd = app.add_subcommand("finetune", "train the threat classifier");
  fine_cmd->add_option("dataset", o.inputs, "labeled training dataset")->required()->expected(1);
  fine_cmd->add_option("--held-out", o.held_out, "labeled dataset scored after every epoch");
  fine_cmd->add_option("--init", o.init, "start from this checkpoint (from scratch when omitted)");
  config_opt(fine_cmd, "model/training JSON");
  seed_opt(fine_cmd, "overrides the config seed");
  out_opt(fine_cmd, "checkpoint file");
  det_opt(fine_cmd);

  auto* cls_cmd = app.add_subcommand("classify", "score every packet of a capture");
  cls_cmd->add_option("files", o.inputs, "CHECKPOINT PCAP")->required()->expected(2);
  cls_cmd->add_flag("--explain", o.explain, "include the packet sentence");
  out_opt(cls_cmd, "verdicts JSONL");
  det_opt(cls_cmd);

  auto* eval_cmd = app.add_subcommand("eval", "metrics on a labeled dataset");
  eval_cmd->add_option("files", o.inputs, "CHECKPOINT DATASET")->required()->expected(2);
  eval_cmd->add_option("--run-id", o.run_id, "run name (default: checkpoint file stem)");
  out_opt(eval_cmd, "metrics JSON");
  det_opt(eval_cmd);

  auto* cmp_cmd = app.add_subcommand("compare", "rank evaluated runs");
  cmp_cmd->add_option("runs", o.inputs, "eval manifests or run records")->required()->expected(1, -1);
  out_opt(cmp_cmd, "comparison JSON");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return e.get_exit_code() == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*forge_cmd) return cmd_forge(o, out, err);
    if (*tok_cmd) return cmd_tokenize(o, out, err);
    if (*pre_cmd) return cmd_pretrain(o, out, err);
    if (*fine_cmd) return cmd_finetune(o, out, err);
    if (*cls_cmd) return cmd_classify(o, out, err);
    if (*eval_cmd) return cmd_eval(o, out, err);
    if (*cmp_cmd) return cmd_compare(o, out, err);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const InternalError& e) {
    err << "internal error: " << e.what() << "\n";
    return kExitInternal;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << "\n";
    return kExitInternal;
  }
  return kExitInternal;
}

}  // namespace sentinel::cli
