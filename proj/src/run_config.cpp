#include "sentinel/run_config.hpp"

#include "json_reader.hpp"

namespace sentinel {
namespace {

using detail::invalid;
using detail::json;
using detail::ObjectReader;

void read_schedule(const ObjectReader& r, nn::Schedule& s) {
  if (r.has("epochs")) s.epochs = r.u64("epochs", 100000);
  if (r.has("batch_size")) {
    s.batch_size = r.u64("batch_size", 1 << 20);
    if (s.batch_size == 0) invalid(r.field("batch_size"), "must be > 0");
  }
  if (r.has("lr")) s.adam.lr = r.number("lr", 0, 10);
  if (r.has("beta1")) s.adam.beta1 = r.number("beta1", 0, 0.999999);
  if (r.has("beta2")) s.adam.beta2 = r.number("beta2", 0, 0.999999999);
  if (r.has("eps")) s.adam.eps = r.number("eps", 1e-300, 1);
}

json adam_json(const nn::Schedule& s) {
  return {{"epochs", s.epochs}, {"batch_size", s.batch_size}, {"lr", s.adam.lr},
          {"beta1", s.adam.beta1}, {"beta2", s.adam.beta2}, {"eps", s.adam.eps}};
}

}  // namespace

RunConfig default_run_config(const Vocab& vocab) {
  RunConfig c;
  c.model = nn::default_model_config(vocab);
  c.finetune.epochs = 10;
  c.freeze = nn::default_freeze_plan();
  return c;
}

RunConfig parse_run_config(const std::string& json_text, const Vocab& vocab) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    invalid("$", std::string("not valid JSON: ") + e.what());
  }
  RunConfig c = default_run_config(vocab);
  const ObjectReader top(j, "", {"seed", "model", "pretrain", "finetune"});
  if (top.has("seed")) c.seed = top.u64("seed", std::numeric_limits<std::uint64_t>::max());

  if (top.has("model")) {
    const ObjectReader m(top.at("model"), "model", {"d_model", "n_layers", "n_heads", "d_ff", "dropout"});
    if (m.has("d_model")) c.model.d_model = m.u64("d_model", 4096);
    if (m.has("n_layers")) c.model.n_layers = m.u64("n_layers", 64);
    if (m.has("n_heads")) c.model.n_heads = m.u64("n_heads", 4096);
    if (m.has("d_ff")) c.model.d_ff = m.u64("d_ff", 65536);
    if (m.has("dropout")) c.model.dropout = m.number("dropout", 0, 1);
  }
  nn::validate(c.model);

  if (top.has("pretrain")) {
    const ObjectReader p(top.at("pretrain"), "pretrain",
                         {"epochs", "batch_size", "lr", "beta1", "beta2", "eps", "eval_limit"});
    read_schedule(p, c.pretrain);
    if (p.has("eval_limit")) c.pretrain.eval_limit = p.u64("eval_limit", 1 << 30);
  }
  if (top.has("finetune")) {
    const ObjectReader f(top.at("finetune"), "finetune",
                         {"epochs", "batch_size", "lr", "beta1", "beta2", "eps", "target_accuracy", "freeze"});
    read_schedule(f, c.finetune);
    if (f.has("target_accuracy")) c.finetune.target_accuracy = f.number("target_accuracy", 0, 1);
    if (f.has("freeze")) {
      const json& v = f.at("freeze");
      if (!v.is_array()) invalid("finetune.freeze", "expected an array of names");
      c.freeze.clear();
      for (std::size_t i = 0; i < v.size(); ++i) {
        if (!v[i].is_string()) invalid("finetune.freeze[" + std::to_string(i) + "]", "expected a string");
        c.freeze.push_back(v[i].get<std::string>());
      }
    }
  }
  // Unknown targets fail here rather than after a pretraining run.
  nn::resolve_freeze(nn::zero_params(c.model), c.freeze);
  return c;
}

std::string run_config_to_json(const RunConfig& c) {
  json pre = adam_json(c.pretrain);
  pre["eval_limit"] = c.pretrain.eval_limit;
  json fine = adam_json(c.finetune);
  fine["target_accuracy"] = c.finetune.target_accuracy;
  fine["freeze"] = c.freeze;
  const json j = {{"seed", c.seed},
                  {"model",
                   {{"d_model", c.model.d_model},
                    {"n_layers", c.model.n_layers},
                    {"n_heads", c.model.n_heads},
                    {"d_ff", c.model.d_ff},
                    {"dropout", c.model.dropout}}},
                  {"pretrain", pre},
                  {"finetune", fine}};
  return j.dump(2) + "\n";
}

}  // namespace sentinel
