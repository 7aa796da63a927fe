#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>
#include <unistd.h>

#include "cli.hpp"
#include "sentinel/bytes.hpp"
#include "sentinel/dataset.hpp"
#include "sentinel/forge.hpp"
#include "sentinel/nn/checkpoint.hpp"
#include "sentinel/pcap.hpp"
#include "sentinel/run_config.hpp"

using namespace sentinel;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Result {
  int code = 0;
  std::string out;
  std::string err;
};

Result sentinel_run(std::vector<std::string> args) {
  std::ostringstream out, err;
  Result r;
  r.code = cli::run(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string slurp(const fs::path& p) {
  const Bytes b = read_file(p.string());
  return std::string(b.begin(), b.end());
}

// Scratch directory shared by the cases in this binary, removed at exit.
const fs::path& scratch() {
  static const struct Dir {
    fs::path path;
    Dir() : path(fs::temp_directory_path() / ("sentinel_cli_test_" + std::to_string(::getpid()))) {
      fs::remove_all(path);
      fs::create_directories(path);
    }
    ~Dir() { fs::remove_all(path); }
  } dir;
  return dir.path;
}

std::string at(const std::string& name) {
  const fs::path p = scratch() / name;
  fs::create_directories(p.parent_path());
  return p.string();
}

const char* kSmallConfig = R"({"model": {"d_model": 16, "n_layers": 1, "n_heads": 2, "d_ff": 32},
  "pretrain": {"epochs": 1, "eval_limit": 128}, "finetune": {"epochs": 1, "freeze": ["embeddings"]}})";

// Forged capture plus a tokenized, split dataset, made once.
struct Pipeline {
  std::string pcap, labels, data, train, test, config;
  Pipeline() {
    const std::string dir = at("forged");
    REQUIRE(sentinel_run({"forge", "--out", dir}).code == 0);
    pcap = dir + "/capture.pcap";
    labels = dir + "/labels.jsonl";
    data = at("tok/data.sntd");
    REQUIRE(sentinel_run({"tokenize", pcap, "--labels", labels, "--split", "100,50", "--out", data}).code == 0);
    train = at("tok/data.train.sntd");
    test = at("tok/data.test.sntd");
    config = at("small.json");
    write_file_atomic(config, std::string(kSmallConfig));
  }
};

const Pipeline& pipeline() {
  static const Pipeline p;
  return p;
}

}  // namespace

TEST_CASE("usage errors exit 2, help exits 0") {
  CHECK(sentinel_run({}).code == cli::kExitUsage);
  CHECK(sentinel_run({"bogus"}).code == cli::kExitUsage);
  CHECK(sentinel_run({"forge"}).code == cli::kExitUsage);  // --out missing
  CHECK(sentinel_run({"tokenize", "a.pcap", "--out", "x", "--format", "xml"}).code == cli::kExitUsage);
  const Result help = sentinel_run({"--help"});
  CHECK(help.code == 0);
  CHECK(help.out.find("classify") != std::string::npos);
}

TEST_CASE("exit code classes") {
  CHECK(cli::exit_code_for(ErrorCode::InvalidConfig) == 2);
  CHECK(cli::exit_code_for(ErrorCode::Io) == 2);
  CHECK(cli::exit_code_for(ErrorCode::UnknownFreezeTarget) == 2);
  CHECK(cli::exit_code_for(ErrorCode::BadMagic) == 3);
  CHECK(cli::exit_code_for(ErrorCode::CompatibilityError) == 3);
  CHECK(cli::exit_code_for(ErrorCode::BadDataset) == 3);
}

TEST_CASE("forge writes three files and is reproducible") {
  const auto& p = pipeline();
  CHECK(fs::is_regular_file(p.pcap));
  CHECK(fs::is_regular_file(p.labels));
  const json m1 = json::parse(slurp(at("forged/manifest.json")));
  CHECK(m1["subcommand"] == "forge");
  CHECK(m1["outputs"]["pcap"]["sha256"] == sha256_hex(read_file(p.pcap)));
  CHECK(m1["outputs"]["pcap"]["sha256"] == m1["forge"]["pcap_sha256"]);

  REQUIRE(sentinel_run({"forge", "--out", at("forged2")}).code == 0);
  const json m2 = json::parse(slurp(at("forged2/manifest.json")));
  CHECK(m1["outputs"]["pcap"]["sha256"] == m2["outputs"]["pcap"]["sha256"]);
  CHECK(m1["outputs"]["labels"]["sha256"] == m2["outputs"]["labels"]["sha256"]);
  CHECK(m1["config"] == m2["config"]);

  REQUIRE(sentinel_run({"forge", "--seed", "8", "--out", at("forged3")}).code == 0);
  const json m3 = json::parse(slurp(at("forged3/manifest.json")));
  CHECK(m3["outputs"]["pcap"]["sha256"] != m1["outputs"]["pcap"]["sha256"]);
}

TEST_CASE("forge rejects bad configs with the field path") {
  json doc = json::parse(scenario_to_json(default_scenario()));
  doc["benign"]["flow_rate"] = 0;
  write_file_atomic(at("bad1.json"), doc.dump());
  Result r = sentinel_run({"forge", "--config", at("bad1.json"), "--out", at("bad")});
  CHECK(r.code == 2);
  CHECK(r.err.find("benign.flow_rate") != std::string::npos);

  doc = json::parse(scenario_to_json(default_scenario()));
  doc["attacks"][1]["rate"] = -5;
  write_file_atomic(at("bad2.json"), doc.dump());
  r = sentinel_run({"forge", "--config", at("bad2.json"), "--out", at("bad")});
  CHECK(r.code == 2);
  CHECK(r.err.find("attacks[1].rate") != std::string::npos);

  write_file_atomic(at("bad3.json"), std::string("{not json"));
  CHECK(sentinel_run({"forge", "--config", at("bad3.json"), "--out", at("bad")}).code == 2);
  CHECK(sentinel_run({"forge", "--config", at("missing.json"), "--out", at("bad")}).code == 2);
  CHECK(r.out.empty());
}

TEST_CASE("tokenize covers every record and is byte-identical on rerun") {
  const auto& p = pipeline();
  const Capture cap = read_pcap_file(p.pcap);
  const TokenDataset ds = load_dataset(p.data);
  CHECK(ds.size() == cap.records.size());
  CHECK(ds.fully_labeled());
  for (const auto& s : ds.seqs) REQUIRE(is_well_formed(s, pl1_vocab()));

  REQUIRE(sentinel_run({"tokenize", p.pcap, "--labels", p.labels, "--split", "100,50", "--out", at("tok2/data.sntd")}).code == 0);
  CHECK(read_file(p.data) == read_file(at("tok2/data.sntd")));
  CHECK(read_file(p.train) == read_file(at("tok2/data.train.sntd")));

  REQUIRE(sentinel_run({"tokenize", p.pcap, "--labels", p.labels, "--format", "jsonl", "--out", at("tok3/data.jsonl")}).code == 0);
  CHECK(load_dataset(at("tok3/data.jsonl")) == ds);

  const TokenDataset train = load_dataset(p.train);
  CHECK(train.size() == 400);
  CHECK(load_dataset(p.test).size() == 200);

  // Without labels only the unlabeled form comes out.
  REQUIRE(sentinel_run({"tokenize", p.pcap, "--out", at("tok4/data.sntd")}).code == 0);
  CHECK_FALSE(load_dataset(at("tok4/data.sntd")).fully_labeled());
  CHECK(sentinel_run({"tokenize", p.pcap, "--split", "9", "--out", at("tok5/d.sntd")}).code == 2);

  write_file_atomic(at("junk.pcap"), std::string("not a capture at all"));
  CHECK(sentinel_run({"tokenize", at("junk.pcap"), "--out", at("tok6/d.sntd")}).code == 3);
}

TEST_CASE("pretrain and finetune: reproducible checkpoints, logs, vocabulary guard") {
  const auto& p = pipeline();
  CHECK(sentinel_run({"pretrain", at("nope.sntd"), "--out", at("m/x.ckpt")}).code == 2);

  for (const char* name : {"m/pre1.ckpt", "m/pre2.ckpt"}) {
    const Result r = sentinel_run({"pretrain", p.train, "--config", p.config, "--seed", "3", "--out", at(name)});
    REQUIRE(r.code == 0);
    CHECK(r.out.empty());
    CHECK(r.err.find("pretrain epoch 1") != std::string::npos);
  }
  CHECK(sha256_hex(read_file(at("m/pre1.ckpt"))) == sha256_hex(read_file(at("m/pre2.ckpt"))));
  CHECK(slurp(at("m/pre1.ckpt.log.csv")).rfind("epoch,split,loss,accuracy\n0,eval,", 0) == 0);
  const json pm = json::parse(slurp(at("m/pre1.ckpt.manifest.json")));
  CHECK(pm["seeds"]["seed"] == 3);
  CHECK(pm["config"]["model"]["d_model"] == 16);

  REQUIRE(sentinel_run({"pretrain", p.train, "--config", p.config, "--seed", "4", "--out", at("m/pre3.ckpt")}).code == 0);
  CHECK(read_file(at("m/pre1.ckpt")) != read_file(at("m/pre3.ckpt")));

  REQUIRE(sentinel_run({"finetune", p.train, "--held-out", p.test, "--init", at("m/pre1.ckpt"), "--config",
                        p.config, "--out", at("m/fine.ckpt")})
              .code == 0);
  const std::string log = slurp(at("m/fine.ckpt.log.csv"));
  CHECK(log.find("1,train,") != std::string::npos);
  CHECK(log.find("1,test,") != std::string::npos);
  CHECK(json::parse(slurp(at("m/fine.ckpt.manifest.json")))["freeze"] == json::array({"embeddings"}));

  // A checkpoint made for another vocabulary is refused.
  nn::ModelConfig cfg = nn::default_model_config(pl1_vocab());
  cfg.d_model = 8;
  cfg.n_heads = 2;
  cfg.n_layers = 1;
  write_file_atomic(at("m/alien.ckpt"), nn::save_checkpoint(nn::init_model(cfg, 1), std::string(64, 'a')));
  const Result r = sentinel_run({"finetune", p.train, "--init", at("m/alien.ckpt"), "--out", at("m/x.ckpt")});
  CHECK(r.code == 3);
  CHECK(r.err.find("CompatibilityError") != std::string::npos);

  write_file_atomic(at("badfreeze.json"), std::string(R"({"finetune": {"freeze": ["layer9"]}})"));
  CHECK(sentinel_run({"finetune", p.train, "--config", at("badfreeze.json"), "--out", at("m/x.ckpt")}).code == 2);
  CHECK(sentinel_run({"finetune", p.pcap, "--out", at("m/x.ckpt")}).code == 3);
}

TEST_CASE("classify: one verdict per record, probabilities sum to 1, --explain") {
  const auto& p = pipeline();
  nn::ModelConfig cfg = nn::default_model_config(pl1_vocab());
  cfg.d_model = 8;
  cfg.n_heads = 2;
  cfg.n_layers = 1;
  cfg.d_ff = 8;
  write_file_atomic(at("c/tiny.ckpt"), nn::save_checkpoint(nn::init_model(cfg, 5), pl1_vocab().hash()));

  REQUIRE(sentinel_run({"classify", at("c/tiny.ckpt"), p.pcap, "--explain", "--out", at("c/v.jsonl")}).code == 0);
  const Capture cap = read_pcap_file(p.pcap);
  const TokenDataset ds = load_dataset(p.data);
  std::istringstream in(slurp(at("c/v.jsonl")));
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    const json v = json::parse(line);
    REQUIRE(v["index"] == n);
    CHECK(v["ts_us"] == cap.records[n].timestamp_us());
    double sum = 0;
    for (auto c : kAllClasses) sum += v["probs"][std::string(to_string(c))].get<double>();
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(v["threat_level"].get<double>() ==
          doctest::Approx(1.0 - v["probs"]["benign"].get<double>()).epsilon(1e-12));
    if (n % 997 == 0) CHECK(v["sentence"] == render_sentence(ds.seqs[n], pl1_vocab()));
    ++n;
  }
  CHECK(n == cap.records.size());

  REQUIRE(sentinel_run({"classify", at("c/tiny.ckpt"), p.pcap, "--out", at("c/plain.jsonl")}).code == 0);
  CHECK(slurp(at("c/plain.jsonl")).find("\"sentence\"") == std::string::npos);
  CHECK(sentinel_run({"classify", at("c/tiny.ckpt"), at("nope.pcap"), "--out", at("c/x.jsonl")}).code == 2);
}

namespace {

// Model whose prediction is the class of a marker token: with zero query and
// key weights every position attends uniformly, value and output projections
// are the identity and the feed-forward branch is zero, so the [CLS] state is
// driven by the marker embedding alone.
nn::Model marker_model(const std::array<TokenId, kClassCount>& markers) {
  nn::ModelConfig cfg = nn::default_model_config(pl1_vocab());
  cfg.d_model = 8;
  cfg.n_heads = 2;
  cfg.n_layers = 1;
  cfg.d_ff = 4;
  nn::Model m{cfg, nn::zero_params(cfg)};
  auto& P = m.params;
  for (const char* g : {"layer0.ln1.gain", "layer0.ln2.gain", "final_ln.gain"}) P[g].setOnes();
  P["layer0.attn.wv"].setIdentity();
  P["layer0.attn.wo"].setIdentity();
  for (std::size_t k = 0; k < kClassCount; ++k) {
    P["tok_emb"](markers[k], static_cast<Eigen::Index>(k)) = 10.0;
    P["cls.w"](static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k)) = 1.0;
  }
  return m;
}

}  // namespace

TEST_CASE("eval reproduces the golden fixture report; compare ranks runs") {
  const std::array<TokenId, kClassCount> markers{20, 21, 22, 23};
  const nn::Model model = marker_model(markers);
  write_file_atomic(at("e/marker.ckpt"), nn::save_checkpoint(model, pl1_vocab().hash()));

  std::istringstream csv(slurp(fs::path(SENTINEL_FIXTURE_DIR) / "eval_fixture.csv"));
  std::string line;
  std::getline(csv, line);
  TokenDataset ds;
  ds.vocab_sha256 = pl1_vocab().hash();
  while (std::getline(csv, line)) {
    const auto comma = line.find(',');
    const ThreatClass truth = *parse_threat_class(line.substr(0, comma));
    const ThreatClass pred = *parse_threat_class(line.substr(comma + 1));
    TokenSeq s;
    s.ids[0] = special::kCls;
    s.ids[1] = markers[index_of(pred)];
    s.ids[2] = special::kSep;
    s.mask[0] = s.mask[1] = s.mask[2] = true;
    REQUIRE(nn::predict(model, s).cls == pred);
    ds.seqs.push_back(s);
    ds.labels.push_back(truth);
  }
  REQUIRE(ds.size() == 20);
  write_file_atomic(at("e/fixture.sntd"), encode_dataset(ds));

  const Result r = sentinel_run({"eval", at("e/marker.ckpt"), at("e/fixture.sntd"), "--out", at("e/a.json")});
  REQUIRE(r.code == 0);
  CHECK(r.out == slurp(fs::path(SENTINEL_FIXTURE_DIR) / "eval_fixture_report.txt"));
  const json metrics = json::parse(slurp(at("e/a.json")));
  CHECK(metrics["macro_f1"].get<double>() == 0.4062);
  const json man = json::parse(slurp(at("e/a.json.manifest.json")));
  CHECK(man["run_record"]["run_id"] == "marker");

  // Second run, same predictions; compare breaks the tie by run id.
  REQUIRE(sentinel_run({"eval", at("e/marker.ckpt"), at("e/fixture.sntd"), "--run-id", "alpha", "--out",
                        at("e/b.json")})
              .code == 0);
  Result c = sentinel_run({"compare", at("e/a.json.manifest.json"), "--out", at("e/one.json")});
  REQUIRE(c.code == 0);
  json one = json::parse(slurp(at("e/one.json")));
  REQUIRE(one["ranked"].size() == 1);
  CHECK(one["ranked"][0]["run_id"] == "marker");

  c = sentinel_run({"compare", at("e/a.json.manifest.json"), at("e/b.json.manifest.json"), "--out", at("e/two.json")});
  REQUIRE(c.code == 0);
  const json two = json::parse(slurp(at("e/two.json")));
  CHECK(two["ranked"][0]["run_id"] == "alpha");
  CHECK(two["ranked"][1]["run_id"] == "marker");
  CHECK(c.out.find("alpha") < c.out.find("marker"));

  CHECK(sentinel_run({"compare", at("e/none.json"), "--out", at("e/x.json")}).code == 2);
  CHECK(sentinel_run({"eval", at("e/marker.ckpt"), at("e/none.sntd"), "--out", at("e/x.json")}).code == 2);
  CHECK(sentinel_run({"compare", at("e/fixture.sntd"), "--out", at("e/x.json")}).code == 3);
}

TEST_CASE("shipped configs equal the built-in defaults") {
  const std::string dir = SENTINEL_CONFIG_DIR;
  CHECK(parse_scenario(slurp(dir + "/scenario.json")) == default_scenario(7));
  CHECK(parse_run_config(slurp(dir + "/model.json"), pl1_vocab()) == default_run_config(pl1_vocab()));
  const RunConfig d = default_run_config(pl1_vocab());
  CHECK(parse_run_config(run_config_to_json(d), pl1_vocab()) == d);
  CHECK(parse_run_config("{}", pl1_vocab()) == d);

  auto code_of = [](const std::string& text) {
    try {
      parse_run_config(text, pl1_vocab());
    } catch (const Error& e) {
      return std::string(e.what());
    }
    return std::string("ok");
  };
  CHECK(code_of(R"({"model": {"d_model": 10, "n_heads": 4}})").find("model.n_heads") != std::string::npos);
  CHECK(code_of(R"({"pretrain": {"epoch": 3}})").find("pretrain.epoch") != std::string::npos);
  CHECK(code_of(R"({"finetune": {"target_accuracy": 2}})").find("finetune.target_accuracy") != std::string::npos);
  CHECK(code_of(R"({"finetune": {"freeze": ["nope"]}})").find("UnknownFreezeTarget") != std::string::npos);
  CHECK(code_of("[1, 2]").find("InvalidConfig") != std::string::npos);
}
