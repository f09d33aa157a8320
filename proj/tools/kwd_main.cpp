#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "kwd/checkpoint.hpp"
#include "kwd/config.hpp"
#include "kwd/dataset.hpp"
#include "kwd/metrics.hpp"
#include "kwd/model.hpp"
#include "kwd/mosaic.hpp"
#include "kwd/pipeline.hpp"
#include "kwd/rng.hpp"
#include "kwd/selfcheck.hpp"

namespace {

struct CommonOpts {
  std::string config_path;
  std::string preset;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* sub, CommonOpts& c) {
  sub->add_option("--config", c.config_path, "config file (ini-style sections)")->type_name("FILE");
  sub->add_option("--preset", c.preset, "named model preset")
      ->type_name("NAME")
      ->check(CLI::IsMember({"mcc0", "mcc1", "mcc2"}));
  sub->add_option("--set", c.sets, "override, e.g. --set contrast.lambda=0")->type_name("KEY=VALUE");
  sub->add_option("--seed", c.seed, "override train.seed")->type_name("N");
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::invalid_argument("config: cannot read '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Resolution order: defaults (or the config embedded in a checkpoint, which
// replaces --config) -> --config -> --preset -> --set -> --seed.
kwd::Config resolve_config(const CommonOpts& c, const std::string* embedded) {
  kwd::Config cfg = kwd::Config::defaults();
  if (embedded) {
    if (!c.config_path.empty())
      throw std::invalid_argument("--config conflicts with the config embedded in --ckpt");
    cfg = kwd::Config::parse(*embedded);
  } else if (!c.config_path.empty()) {
    cfg = kwd::Config::parse(read_file(c.config_path));
  }
  if (!c.preset.empty()) kwd::apply_preset(cfg, c.preset);
  for (const std::string& kv : c.sets) {
    const std::size_t eq = kv.find('=');
    if (eq == std::string::npos || eq == 0)
      throw std::invalid_argument("--set expects section.key=value, got '" + kv + "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (c.seed) cfg.train.seed = *c.seed;
  cfg.validate();
  return cfg;
}

// Every run prints the run's exact configuration first; the echo is the
// canonical serialization and parses back into the same config.
void echo_config(const kwd::Config& cfg) {
  const std::string text = cfg.serialize();
  if (!(kwd::Config::parse(text) == cfg)) throw std::runtime_error("config echo is not a fixed point");
  std::cout << text << std::flush;
}

int cmd_gen_data(const CommonOpts& c, const std::string& out) {
  const kwd::Config cfg = resolve_config(c, nullptr);
  echo_config(cfg);
  const std::vector<kwd::Mosaic> mosaics =
      kwd::generate_mosaics(kwd::mosaic_spec(cfg), cfg.data.mosaics, cfg.train.seed);
  kwd::save_mosaics(out, mosaics);
  std::size_t with_animals = 0;
  for (const kwd::Mosaic& m : mosaics)
    if (!m.boxes.empty()) ++with_animals;
  std::cout << "wrote " << mosaics.size() << " mosaics (" << with_animals << " with animals) to " << out
            << "\n";
  return 0;
}

int cmd_extract(const CommonOpts& c, const std::string& data, const std::string& out,
                const std::string& protocol) {
  const kwd::Config cfg = resolve_config(c, nullptr);
  echo_config(cfg);
  const std::vector<kwd::Mosaic> mosaics = kwd::load_mosaics(data);
  std::size_t with_animals = 0;
  for (const kwd::Mosaic& m : mosaics)
    if (!m.boxes.empty()) ++with_animals;
  if (protocol == "pre") {
    kwd::Rng rng = kwd::derive_rng(cfg.train.seed, {kwd::tag("extract-pre")});
    const kwd::PatchSet ps = kwd::extract_pre(mosaics, cfg.data.pre_patch, rng);
    kwd::save_patchset(out, ps);
    std::cout << "extracted " << ps.patches.size() << " patches (" << ps.patch << "x" << ps.patch << ") from "
              << mosaics.size() << " mosaics (" << with_animals << " with animals) to " << out << "\n";
  } else {
    kwd::Rng rng = kwd::derive_rng(cfg.train.seed, {kwd::tag("extract-lt")});
    const kwd::LabeledDataset ds = kwd::extract_lt(mosaics, kwd::lt_params(cfg), rng);
    kwd::save_dataset(out, ds);
    for (const char* split : {"train", "val", "test"}) {
      const auto [fg, bg] = ds.class_counts(split);
      std::cout << split << ": " << (fg + bg) << " patches (fg " << fg << ", bg " << bg << ")\n";
    }
    std::cout << "extracted " << ds.patches.size() << " patches from " << mosaics.size() << " mosaics ("
              << with_animals << " with animals) to " << out << "\n";
  }
  return 0;
}

int cmd_pretrain(const CommonOpts& c, const std::string& data, const std::string& out,
                 const std::string& ckpt, std::optional<std::uint64_t> until) {
  std::optional<kwd::TrainState> st;
  if (!ckpt.empty()) {
    if (!c.preset.empty() || !c.sets.empty() || c.seed || !c.config_path.empty())
      throw std::invalid_argument("pretrain resume takes its config from the checkpoint; drop the overrides");
    st.emplace(kwd::load_train_state(ckpt));
  } else {
    st.emplace(resolve_config(c, nullptr));
  }
  echo_config(st->cfg);
  const kwd::PatchSet ps = kwd::load_patchset(data);
  const std::size_t target = until ? *until : static_cast<std::size_t>(st->cfg.train.epochs);
  const std::string log_path = out + ".log";
  std::ofstream log(log_path, std::ios::binary);
  if (!log) throw std::runtime_error("pretrain: cannot write '" + log_path + "'");
  const kwd::PretrainStats stats = kwd::pretrain(*st, ps, target, &log);
  kwd::save_train_state(*st, out);
  std::cout << "pretrained to epoch " << st->epoch << " (" << stats.batches_run << " batches this run, last loss "
            << stats.last_total << ")\ncheckpoint: " << out << "\nloss log:   " << log_path << "\n";
  return 0;
}

void save_classifier(const std::string& path, const kwd::Config& cfg, const std::string& kind,
                     kwd::Model& model, const kwd::ProbeResult& r) {
  kwd::Checkpoint ck;
  ck.put_string("meta/config", cfg.serialize());
  ck.put_string("meta/kind", kind);
  for (auto& p : model.enc_q.params()) ck.put_tensor("enc/" + p.name, *p.value);
  ck.put_tensor("clf/weight", r.clf_weight);
  ck.put_tensor("clf/bias", r.clf_bias);
  kwd::save_checkpoint_file(path, ck);
}

int cmd_probe(const CommonOpts& c, const std::string& data, const std::string& ckpt, double fraction,
              const std::string& mode, const std::string& out) {
  std::optional<kwd::TrainState> st;
  std::optional<kwd::Model> fresh;
  kwd::Model* model = nullptr;
  kwd::Config cfg = kwd::Config::defaults();
  if (!ckpt.empty()) {
    st.emplace(kwd::load_train_state(ckpt));
    const std::string embedded = st->cfg.serialize();
    cfg = resolve_config(c, &embedded);
    model = &st->model;
  } else {
    cfg = resolve_config(c, nullptr);
    fresh.emplace(kwd::model_config(cfg), cfg.train.seed);
    model = &*fresh;
  }
  echo_config(cfg);
  const kwd::LabeledDataset ds = kwd::load_dataset(data);
  const kwd::ProbeResult r = mode == "frozen" ? kwd::linear_probe(*model, ds, fraction, cfg, cfg.train.seed)
                                              : kwd::finetune(*model, ds, fraction, cfg, cfg.train.seed);
  std::cout << "mode: " << mode << "  fraction: " << fraction
            << (ckpt.empty() ? "  encoder: random-init" : "  encoder: " + ckpt) << "\n"
            << "train " << kwd::format_metrics(r.train) << "\n"
            << "test  " << kwd::format_metrics(r.test) << "\n";
  if (!out.empty()) {
    save_classifier(out, cfg, mode, *model, r);
    std::cout << "classifier: " << out << "\n";
  }
  return 0;
}

int cmd_eval(const CommonOpts& c, const std::string& data, const std::string& ckpt) {
  const kwd::Checkpoint ck = kwd::load_checkpoint_file(ckpt);
  const std::string embedded = ck.get_string("meta/config");
  const kwd::Config cfg = resolve_config(c, &embedded);
  echo_config(cfg);
  kwd::Model model(kwd::model_config(cfg), cfg.train.seed);
  for (auto& p : model.enc_q.params()) {
    const kwd::Tensor stored = ck.get_tensor("enc/" + p.name);
    if (stored.shape != p.value->shape)
      throw std::invalid_argument("eval: checkpoint parameter 'enc/" + p.name + "' does not fit the model");
    *p.value = stored;
  }
  const kwd::Tensor w = ck.get_tensor("clf/weight");
  const kwd::Tensor b = ck.get_tensor("clf/bias");
  const kwd::LabeledDataset ds = kwd::load_dataset(data);
  for (const char* split : {"train", "val", "test"}) {
    if (ds.split_indices(split).empty()) continue;
    const kwd::Metrics m = kwd::evaluate_classifier(model, w, b, ds, split, cfg);
    std::cout << split << " " << kwd::format_metrics(m) << "\n";
  }
  return 0;
}

int cmd_export(const CommonOpts& c, const std::string& data, const std::string& ckpt,
               const std::string& out) {
  std::optional<kwd::TrainState> st;
  std::optional<kwd::Model> fresh;
  kwd::Model* model = nullptr;
  kwd::Config cfg = kwd::Config::defaults();
  if (!ckpt.empty()) {
    st.emplace(kwd::load_train_state(ckpt));
    const std::string embedded = st->cfg.serialize();
    cfg = resolve_config(c, &embedded);
    model = &st->model;
  } else {
    cfg = resolve_config(c, nullptr);
    fresh.emplace(kwd::model_config(cfg), cfg.train.seed);
    model = &*fresh;
  }
  echo_config(cfg);
  const kwd::LabeledDataset ds = kwd::load_dataset(data);
  std::ofstream f(out, std::ios::binary);
  if (!f) throw std::runtime_error("export-embeddings: cannot write '" + out + "'");
  kwd::export_embeddings(*model, ds, cfg, f);
  std::cout << "wrote " << (ds.patches.size() + 1) << " lines to " << out << "\n";
  return 0;
}

int cmd_selftest(const CommonOpts& c, std::string scratch) {
  const kwd::Config cfg = resolve_config(c, nullptr);
  echo_config(cfg);
  if (scratch.empty()) scratch = std::filesystem::temp_directory_path().string();
  const std::vector<kwd::CheckSuite> suites = kwd::run_all_checks(scratch);
  int checks = 0, failures = 0;
  for (const kwd::CheckSuite& s : suites) {
    checks += s.checks;
    failures += static_cast<int>(s.failures.size());
    std::cout << (s.passed() ? "[PASS] " : "[FAIL] ") << s.name << " (" << s.checks << " checks)\n";
    for (const std::string& f : s.failures) std::cout << "       " << f << "\n";
  }
  std::cout << "passed " << (checks - failures) << " of " << checks << " checks across " << suites.size()
            << " suites\n";
  return failures == 0 ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"kwd: contrastive pretraining and evaluation on synthetic aerial mosaics"};
  app.require_subcommand(1);

  CommonOpts c;
  std::string data, out, ckpt, protocol = "pre", mode, scratch;
  double fraction = 1.0;
  std::optional<std::uint64_t> until;

  CLI::App* gen = app.add_subcommand("gen-data", "generate synthetic mosaics with ground truth");
  add_common(gen, c);
  gen->add_option("--out", out, "output mosaic directory")->required();

  CLI::App* ext = app.add_subcommand("extract", "extract patches from generated mosaics");
  add_common(ext, c);
  ext->add_option("--data", data, "mosaic directory")->required();
  ext->add_option("--out", out, "output patch directory")->required();
  ext->add_option("--protocol", protocol, "pre (unlabeled) or lt (labeled long-tail)")
      ->check(CLI::IsMember({"pre", "lt"}));

  CLI::App* pre = app.add_subcommand("pretrain", "contrastive pretraining on unlabeled patches");
  add_common(pre, c);
  pre->add_option("--data", data, "patch directory (pre protocol)")->required();
  pre->add_option("--out", out, "output checkpoint path")->required();
  pre->add_option("--ckpt", ckpt, "resume from this checkpoint");
  pre->add_option("--until", until, "stop after this many total epochs (default train.epochs)");

  CLI::App* prb = app.add_subcommand("probe", "linear evaluation on frozen features");
  add_common(prb, c);
  prb->add_option("--data", data, "dataset directory (lt protocol)")->required();
  prb->add_option("--ckpt", ckpt, "pretraining checkpoint (omit for the random-init baseline)");
  prb->add_option("--fraction", fraction, "label fraction of the train split");
  prb->add_option("--mode", mode, "frozen or end-to-end")->check(CLI::IsMember({"frozen", "end-to-end"}));
  prb->add_option("--out", out, "save the trained classifier checkpoint here");

  CLI::App* ft = app.add_subcommand("finetune", "end-to-end fine-tuning of encoder and classifier");
  add_common(ft, c);
  ft->add_option("--data", data, "dataset directory (lt protocol)")->required();
  ft->add_option("--ckpt", ckpt, "pretraining checkpoint (omit for the random-init baseline)");
  ft->add_option("--fraction", fraction, "label fraction of the train split");
  ft->add_option("--mode", mode, "frozen or end-to-end")->check(CLI::IsMember({"frozen", "end-to-end"}));
  ft->add_option("--out", out, "save the trained classifier checkpoint here");

  CLI::App* ev = app.add_subcommand("eval", "evaluate a saved classifier on every split");
  add_common(ev, c);
  ev->add_option("--data", data, "dataset directory (lt protocol)")->required();
  ev->add_option("--ckpt", ckpt, "classifier checkpoint from probe/finetune --out")->required();

  CLI::App* ex = app.add_subcommand("export-embeddings", "dump backbone features for every patch");
  add_common(ex, c);
  ex->add_option("--data", data, "dataset directory (lt protocol)")->required();
  ex->add_option("--ckpt", ckpt, "pretraining checkpoint (omit for the random-init encoder)");
  ex->add_option("--out", out, "output text file")->required();

  CLI::App* self = app.add_subcommand("selftest", "run the oracle, gradient and invariant suites");
  add_common(self, c);
  self->add_option("--scratch", scratch, "scratch directory for file-format checks");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(c, out);
    if (ext->parsed()) return cmd_extract(c, data, out, protocol);
    if (pre->parsed()) return cmd_pretrain(c, data, out, ckpt, until);
    if (prb->parsed()) return cmd_probe(c, data, ckpt, fraction, mode.empty() ? "frozen" : mode, out);
    if (ft->parsed()) return cmd_probe(c, data, ckpt, fraction, mode.empty() ? "end-to-end" : mode, out);
    if (ev->parsed()) return cmd_eval(c, data, ckpt);
    if (ex->parsed()) return cmd_export(c, data, ckpt, out);
    if (self->parsed()) return cmd_selftest(c, scratch);
    return 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
