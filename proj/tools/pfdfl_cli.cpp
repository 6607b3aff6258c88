// Command-line driver: data generation, training, evaluation and analyses.
//
// Exit codes: 0 success, 1 I/O or malformed input file, 2 usage or
// validation error, 3 numeric failure.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "pfdfl/analysis.hpp"
#include "pfdfl/checkpoint.hpp"
#include "pfdfl/config.hpp"
#include "pfdfl/errors.hpp"
#include "pfdfl/gradcheck.hpp"
#include "pfdfl/io.hpp"

namespace fs = std::filesystem;
using namespace pfdfl;

namespace {

constexpr int kExitIo = 1;
constexpr int kExitUsage = 2;
constexpr int kExitNumeric = 3;

/// PFDFL_THREADS caps worker threads. Everything runs on the calling
/// thread, so any valid cap is honoured; the value is still validated.
std::size_t thread_cap() {
  const char* env = std::getenv("PFDFL_THREADS");
  if (env == nullptr || *env == '\0') return 1;
  char* end = nullptr;
  const long v = std::strtol(env, &end, 10);
  if (*end != '\0' || v < 1) throw ArgumentError(std::string("PFDFL_THREADS must be a positive integer, got '") + env + "'");
  return static_cast<std::size_t>(v);
}

/// Flags shared by every command that builds a run configuration. Values
/// only override the config file when given on the command line.
struct RunFlags {
  std::string config_path;
  std::string variant;
  double alpha = 0.01;
  std::size_t epochs = 0, batch_size = 0, accum = 0, layers = 0, d_model = 0, heads = 0, d_ff = 0, max_len = 0;
  double lr = 0.0, lr_min = 0.0;
  std::uint64_t seed = 0;
  bool shared_fusion = false;

  std::vector<CLI::Option*> opts;
  CLI::Option *o_variant, *o_alpha, *o_epochs, *o_batch, *o_accum, *o_layers, *o_dmodel, *o_heads, *o_dff, *o_maxlen,
      *o_lr, *o_lrmin, *o_seed, *o_shared;

  void attach(CLI::App* app) {
    app->add_option("--config", config_path, "JSON config (sections encoder, train, data, loss, analysis)")
        ->check(CLI::ExistingFile);
    o_variant = app->add_option("--variant", variant, "baseline|pf|dfl|pf_dfl");
    o_alpha = app->add_option("--alpha", alpha, "retention ratio in (0, 1]")->default_val(0.01);
    o_epochs = app->add_option("--epochs", epochs, "training epochs");
    o_batch = app->add_option("--batch-size", batch_size, "examples per micro-batch (even)");
    o_accum = app->add_option("--accum", accum, "micro-batches per optimizer step");
    o_layers = app->add_option("--layers", layers, "encoder layers");
    o_dmodel = app->add_option("--d-model", d_model, "hidden width");
    o_heads = app->add_option("--heads", heads, "attention heads");
    o_dff = app->add_option("--d-ff", d_ff, "feed-forward width");
    o_maxlen = app->add_option("--max-len", max_len, "maximum sequence length");
    o_lr = app->add_option("--lr", lr, "initial learning rate");
    o_lrmin = app->add_option("--lr-min", lr_min, "final learning rate");
    o_seed = app->add_option("--seed", seed, "seed for split, initialization and shuffling");
    o_shared = app->add_flag("--shared-fusion", shared_fusion, "fuse the masked branch difference once for both heads");
  }

  RunConfig resolve() const {
    RunConfig c = config_path.empty() ? RunConfig{} : load_run_config(config_path);
    if (o_variant->count()) c.train.variant = parse_variant(variant);
    if (o_alpha->count()) c.train.alpha = alpha;
    if (o_epochs->count()) c.train.epochs = epochs;
    if (o_batch->count()) c.train.batch_size = batch_size;
    if (o_accum->count()) c.train.accumulation_steps = accum;
    if (o_layers->count()) c.encoder.n_layers = layers;
    if (o_dmodel->count()) c.encoder.d_model = d_model;
    if (o_heads->count()) c.encoder.n_heads = heads;
    if (o_dff->count()) c.encoder.d_ff = d_ff;
    if (o_maxlen->count()) c.encoder.max_len = max_len;
    if (o_lr->count()) c.train.lr_start = lr;
    if (o_lrmin->count()) c.train.lr_min = lr_min;
    if (o_seed->count()) c.train.seed = seed;
    if (o_shared->count()) c.train.shared_fusion = shared_fusion;
    return c;
  }
};

struct DataFlags {
  std::string path;
  std::string template_name = "qa";

  void attach(CLI::App* app, bool required) {
    auto* o = app->add_option("--data", path, "JSONL dataset");
    if (required) o->required();
    app->add_option("--template", template_name, "qa|summary")->default_val("qa");
  }

  Dataset load() const { return load_jsonl(path, parse_template(template_name)); }
};

void write_resolved_config(const fs::path& out, const RunConfig& cfg) {
  write_file_atomic(out / "config.json", dump_json(to_json(cfg)));
}

void print_report(const std::string& label, const EvalReport& r) {
  std::printf("%s: accuracy=%.4f precision=%.4f recall=%.4f f1=%.4f pairwise=%.4f\n", label.c_str(), r.accuracy,
              r.precision, r.recall, r.f1, r.pairwise_accuracy);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Layer-fusion hallucination detector: data, training, evaluation and analysis"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "write a synthetic paired dataset (JSONL + vocabulary sidecar)");
  std::string gen_out;
  SyntheticSpec spec;
  std::string gen_template = "qa";
  gen->add_option("--out", gen_out, "output JSONL path")->required();
  gen->add_option("--pairs", spec.n_pairs, "number of pairs")->default_val(spec.n_pairs);
  gen->add_option("--vocab", spec.vocab_words, "vocabulary words")->default_val(spec.vocab_words);
  gen->add_option("--knowledge-len", spec.knowledge_len, "knowledge words")->default_val(spec.knowledge_len);
  gen->add_option("--response-len", spec.response_len, "response words")->default_val(spec.response_len);
  gen->add_option("--context-len", spec.context_len, "context words")->default_val(spec.context_len);
  gen->add_option("--corrupt", spec.corrupt_count, "corrupted response words")->default_val(spec.corrupt_count);
  gen->add_option("--seed", spec.seed, "generator seed")->default_val(spec.seed);
  gen->add_option("--template", gen_template, "qa|summary")->default_val("qa");

  // train
  auto* train = app.add_subcommand("train", "train one model and write its run record and checkpoints");
  RunFlags train_flags;
  DataFlags train_data;
  std::string train_out;
  train_flags.attach(train);
  train_data.attach(train, true);
  train->add_option("--out", train_out, "output directory")->required();

  // eval
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset split");
  std::string eval_ckpt, eval_split = "test", eval_out;
  std::optional<std::uint64_t> eval_seed;
  DataFlags eval_data;
  eval->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required()->check(CLI::ExistingFile);
  eval_data.attach(eval, true);
  eval->add_option("--split", eval_split, "train|validation|test|all")
      ->default_val("test")
      ->check(CLI::IsMember({"train", "validation", "test", "all"}));
  eval->add_option("--seed", eval_seed, "split seed (defaults to the checkpoint's seed)");
  eval->add_option("--out", eval_out, "optional JSON report path");

  // ablate
  auto* ablate = app.add_subcommand("ablate", "train all four variants on one split");
  RunFlags ablate_flags;
  DataFlags ablate_data;
  std::string ablate_out;
  ablate_flags.attach(ablate);
  ablate_data.attach(ablate, true);
  ablate->add_option("--out", ablate_out, "output directory")->required();

  // sweep
  auto* sweep = app.add_subcommand("sweep", "retrain across retention ratios");
  RunFlags sweep_flags;
  DataFlags sweep_data;
  std::string sweep_out;
  std::vector<double> sweep_ratios;
  sweep_flags.attach(sweep);
  sweep_data.attach(sweep, true);
  sweep->add_option("--out", sweep_out, "output directory")->required();
  sweep->add_option("--ratios", sweep_ratios, "ratios (default from config: 0.8 0.5 0.2 0.05 0.01)")->delimiter(',');

  // analyze
  auto* analyze = app.add_subcommand("analyze", "post-hoc analyses");
  analyze->require_subcommand(1);
  auto* consistency = analyze->add_subcommand("consistency", "per-layer selected-feature consistency across epochs");
  auto* weights = analyze->add_subcommand("weights", "per-epoch layer weights");
  std::string an_record, an_out, an_branch = "hall";
  for (auto* sub : {consistency, weights}) {
    sub->add_option("--run", an_record, "run record JSON")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", an_out, "output CSV")->required();
  }
  weights->add_option("--branch", an_branch, "hall|fact")->default_val("hall")->check(CLI::IsMember({"hall", "fact"}));
  auto* complexity = analyze->add_subcommand("complexity", "parameter and FLOP overhead against the baseline");
  RunFlags cx_flags;
  std::string cx_out;
  std::size_t cx_batch = 1, cx_seq = 0, cx_vocab = 4100;
  cx_flags.attach(complexity);
  complexity->add_option("--out", cx_out, "output CSV")->required();
  complexity->add_option("--batch", cx_batch, "batch size")->default_val(1);
  complexity->add_option("--seq-len", cx_seq, "sequence length (default max_len)");
  complexity->add_option("--vocab", cx_vocab, "vocabulary size including special ids")->default_val(4100);

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient check of every op and a small model");
  GradcheckOptions gc_opt;
  gc->add_option("--trials", gc_opt.cases, "random cases per op")->default_val(gc_opt.cases);
  gc->add_option("--seed", gc_opt.seed, "seed")->default_val(gc_opt.seed);
  gc->add_option("--tolerance", gc_opt.tolerance, "maximum relative error")->default_val(gc_opt.tolerance);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    thread_cap();
    if (*gen) {
      spec.kind = parse_template(gen_template);
      spec.validate();
      if (spec.corrupt_count == 0) {
        std::fprintf(stderr, "warning: --corrupt 0 produces identical pair members (null-signal control); "
                             "expect chance-level accuracy\n");
      }
      save_dataset(generate_synthetic(spec), gen_out);
      std::printf("wrote %zu examples to %s\n", 2 * spec.n_pairs, gen_out.c_str());
    } else if (*train) {
      const RunConfig cfg = train_flags.resolve();
      cfg.validate();
      const Dataset ds = train_data.load();
      const fs::path out(train_out);
      fs::create_directories(out);
      write_resolved_config(out, cfg);
      const TrainedRun run = train_run(cfg, ds, out / "checkpoints");
      write_file_atomic(out / "run_record.json", dump_json(to_json(run.record)));
      write_file_atomic(out / "metrics.csv", epoch_metrics_csv(run.record));
      for (const EpochRecord& e : run.record.epochs) {
        print_report("epoch " + std::to_string(e.epoch) + " validation", e.validation);
      }
      if (run.record.test) print_report("test", *run.record.test);
    } else if (*eval) {
      const DualModel model = load_checkpoint(eval_ckpt);
      const Dataset ds = eval_data.load();
      std::vector<std::size_t> indices;
      if (eval_split == "all") {
        for (std::size_t i = 0; i < ds.examples.size(); ++i) indices.push_back(i);
      } else {
        const Split split = split_pairs(ds, eval_seed.value_or(model.config().seed));
        indices = eval_split == "train" ? split.train : eval_split == "validation" ? split.validation : split.test;
      }
      const EncodedSet set = EncodedSet::build(ds, indices, model.config().encoder.max_len);
      const EvalResult r = evaluate(model, set);
      print_report(eval_split, r.report);
      if (!eval_out.empty()) write_file_atomic(eval_out, dump_json(to_json(r.report)));
    } else if (*ablate) {
      const RunConfig cfg = ablate_flags.resolve();
      cfg.validate();
      const Dataset ds = ablate_data.load();
      const fs::path out(ablate_out);
      fs::create_directories(out);
      write_resolved_config(out, cfg);
      const auto rows = ablation_matrix(cfg, ds);
      write_file_atomic(out / "ablation.csv", ablation_csv(rows));
      std::fputs(ablation_csv(rows).c_str(), stdout);
    } else if (*sweep) {
      RunConfig cfg = sweep_flags.resolve();
      if (!sweep_ratios.empty()) cfg.analysis.ratios = sweep_ratios;
      cfg.validate();
      const Dataset ds = sweep_data.load();
      const fs::path out(sweep_out);
      fs::create_directories(out);
      write_resolved_config(out, cfg);
      const auto rows = ratio_sweep(cfg, ds, cfg.analysis.ratios);
      write_file_atomic(out / "sweep.csv", sweep_csv(rows));
      std::fputs(sweep_csv(rows).c_str(), stdout);
    } else if (*analyze) {
      if (*consistency) {
        const auto rows = consistency_report(load_run_record(an_record));
        write_file_atomic(an_out, consistency_csv(rows));
        std::fputs(consistency_csv(rows).c_str(), stdout);
      } else if (*weights) {
        const std::string csv = layer_weights_csv(load_run_record(an_record), an_branch == "hall" ? 0 : 1);
        write_file_atomic(an_out, csv);
        std::fputs(csv.c_str(), stdout);
      } else if (*complexity) {
        RunConfig cfg = cx_flags.resolve();
        cfg.encoder.vocab_size = cx_vocab;
        cfg.validate();
        const std::size_t seq = cx_seq == 0 ? cfg.encoder.max_len : cx_seq;
        std::vector<ComplexityReport> rows;
        for (Variant v : {Variant::kBaseline, Variant::kPfOnly, Variant::kDflOnly, Variant::kPfDfl}) {
          TrainConfig t = cfg.train;
          t.variant = v;
          rows.push_back(complexity_report(make_model_config(cfg.encoder, t), cx_batch, seq));
        }
        write_file_atomic(cx_out, complexity_csv(rows));
        std::fputs(complexity_csv(rows).c_str(), stdout);
      }
    } else if (*gc) {
      bool ok = true;
      for (const std::string& op : gradcheck_op_names()) {
        const GradcheckResult r = gradcheck_op(op, gc_opt);
        std::printf("%-14s %s cases=%zu coords=%zu skipped=%zu max_rel_err=%.3g\n", op.c_str(),
                    r.passed() ? "PASS" : "FAIL", r.cases, r.coords, r.skipped, r.max_rel_error);
        ok = ok && r.passed();
      }
      ModelConfig mc;
      mc.encoder = EncoderConfig{64, 16, 2, 2, 32, 16, 0.0};
      mc.identical_init = false;
      mc.seed = gc_opt.seed;
      const GradcheckResult r = gradcheck_model(mc, 2, 16, gc_opt);
      std::printf("%-14s %s coords=%zu skipped=%zu max_rel_err=%.3g\n", r.name.c_str(), r.passed() ? "PASS" : "FAIL",
                  r.coords, r.skipped, r.max_rel_error);
      ok = ok && r.passed();
      if (!ok) return kExitNumeric;
    }
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric error: %s\n", e.what());
    return kExitNumeric;
  } catch (const IoError& e) {
    std::fprintf(stderr, "i/o error: %s\n", e.what());
    return kExitIo;
  } catch (const FormatError& e) {
    std::fprintf(stderr, "format error: %s\n", e.what());
    return kExitIo;
  } catch (const LoadError& e) {
    std::fprintf(stderr, "load error: %s\n", e.what());
    return kExitIo;
  } catch (const ParseError& e) {
    std::fprintf(stderr, "parse error: %s\n", e.what());
    return kExitIo;
  } catch (const VocabularyError& e) {
    std::fprintf(stderr, "vocabulary error: %s\n", e.what());
    return kExitIo;
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  } catch (const fs::filesystem_error& e) {
    std::fprintf(stderr, "i/o error: %s\n", e.what());
    return kExitIo;
  }
  return 0;
}
