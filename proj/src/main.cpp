#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>
#include <string>
#include <vector>

#include "motionalign/config_io.hpp"
#include "motionalign/evalkit.hpp"
#include "motionalign/presets.hpp"

// Command-line entry point. Exit codes: 0 success, 2 configuration error
// (bad file, unknown key/preset, invalid value), 3 I/O error (unreadable or
// incompatible checkpoint, unwritable output), 4 numerical abort.

namespace fs = std::filesystem;
using nlohmann::json;
using namespace ma;

namespace {

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) throw IoError("cannot write '" + path.string() + "'");
}

fs::path resolve_out_root(const std::string& flag) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv("MOTIONALIGN_OUT"))
    if (*env) return env;
  return "runs";
}

std::vector<SceneSpec> eval_dataset(int n, uint64_t eval_seed, uint64_t stream) {
  Rng r(eval_seed);
  return make_dataset(n, /*class_balance=*/true, r.fork(stream).next_u64());
}

ProbeConfig probe_config(const EvalConfig& ev, bool frozen) {
  ProbeConfig pc;
  pc.windows = ev.probe_windows;
  pc.epochs = ev.probe_epochs;
  pc.lr = ev.probe_lr;
  pc.batch = ev.probe_batch;
  pc.seed = ev.seed;
  pc.frozen = frozen;
  pc.ft_epochs = ev.ft_epochs;
  pc.ft_lr = ev.ft_lr;
  pc.ft_batch = ev.ft_batch;
  return pc;
}

std::string matrix_csv(const Tensor<float>& m) {
  MA_CHECK(int(m.dims.size()) == 2, "csv export expects a matrix");
  std::string s;
  char buf[48];
  for (int i = 0; i < m.dims[0]; ++i) {
    for (int j = 0; j < m.dims[1]; ++j) {
      std::snprintf(buf, sizeof(buf), j + 1 < m.dims[1] ? "%.9g," : "%.9g\n",
                    double(m.at2(i, j)));
      s += buf;
    }
  }
  return s;
}

// Trains per the resolved config, writing config.ini, metrics.jsonl, and
// checkpoint.bin (refreshed at every epoch). Returns the final-epoch mean loss.
double run_pretrain(const RunConfig& cfg, const fs::path& out) {
  fs::create_directories(out);
  write_text_file(out / "config.ini", serialize_config(cfg));
  Trainer t(cfg.train);
  std::ofstream metrics(out / "metrics.jsonl", std::ios::binary | std::ios::trunc);
  if (!metrics) throw IoError("cannot write '" + (out / "metrics.jsonl").string() + "'");

  const int spe = cfg.train.steps_per_epoch();
  double ep_loss = 0, ep_iou = 0, last_ep_loss = 0;
  while (!t.done()) {
    StepMetrics m = t.train_step();
    metrics << metrics_json(m) << '\n';
    ep_loss += m.bundle.total;
    ep_iou += m.fg_iou;
    if ((m.step + 1) % spe == 0) {
      int ep = int((m.step + 1) / spe);
      last_ep_loss = ep_loss / spe;
      std::printf("epoch %3d/%d  loss %.4f  fg-iou %.3f  lr %.6f\n", ep, cfg.train.epochs,
                  last_ep_loss, ep_iou / spe, m.lr);
      std::fflush(stdout);
      metrics.flush();
      if (!metrics) throw IoError("metrics stream failed");
      t.save_checkpoint((out / "checkpoint.bin").string());
      ep_loss = ep_iou = 0;
    }
  }
  return last_ep_loss;
}

// Rebuilds the model for the given config and restores a checkpoint into it.
Trainer restore(const RunConfig& cfg, const std::string& ckpt, bool force) {
  Trainer t(cfg.train);
  t.load_checkpoint(ckpt, force);
  return t;
}

json probe_json(const ProbeResult& r) {
  return json{{"top1", r.top1}, {"per_class", r.per_class}, {"frozen", r.frozen}};
}

int cmd_probe(const RunConfig& cfg, const std::string& ckpt, const fs::path& out, bool force) {
  Trainer t = restore(cfg, ckpt, force);
  const auto& em = t.model().enc.model;
  const auto& ps = t.model().enc.query;
  auto train_specs = eval_dataset(cfg.eval.probe_train, cfg.eval.seed, 10);
  auto test_specs = eval_dataset(cfg.eval.probe_test, cfg.eval.seed, 11);

  ProbeResult frozen = linear_probe(em, ps, train_specs, test_specs, cfg.train.raw_frames,
                                    cfg.train.pipe.aug, probe_config(cfg.eval, true));
  std::printf("frozen probe top-1: %.4f\n", frozen.top1);
  std::fflush(stdout);
  ProbeResult tuned = linear_probe(em, ps, train_specs, test_specs, cfg.train.raw_frames,
                                   cfg.train.pipe.aug, probe_config(cfg.eval, false));
  std::printf("fine-tuned top-1:   %.4f\n", tuned.top1);

  json j{{"checkpoint", ckpt},
         {"train_videos", int(train_specs.size())},
         {"test_videos", int(test_specs.size())},
         {"frozen", probe_json(frozen)},
         {"finetuned", probe_json(tuned)}};
  write_text_file(out / "probe.json", j.dump(2) + "\n");
  return 0;
}

int cmd_retrieve(const RunConfig& cfg, const std::string& ckpt, const fs::path& out,
                 bool force) {
  Trainer t = restore(cfg, ckpt, force);
  const auto& em = t.model().enc.model;
  const auto& ps = t.model().enc.query;
  auto gallery = eval_dataset(cfg.eval.probe_train, cfg.eval.seed, 12);
  auto queries = eval_dataset(cfg.eval.probe_test, cfg.eval.seed, 13);

  std::vector<int> gl, ql;
  Tensor<float> gf = video_features(em, ps, gallery, cfg.train.raw_frames,
                                    cfg.train.pipe.aug, cfg.eval.probe_windows, &gl);
  Tensor<float> qf = video_features(em, ps, queries, cfg.train.raw_frames,
                                    cfg.train.pipe.aug, cfg.eval.probe_windows, &ql);
  RetrievalResult rr = recall_at(gf, gl, qf, ql, cfg.eval.retrieval_ks);

  json j{{"checkpoint", ckpt}, {"gallery", int(gallery.size())}, {"queries", int(queries.size())}};
  for (size_t i = 0; i < rr.ks.size(); ++i) {
    std::printf("R@%-3d %.4f\n", rr.ks[i], rr.recall[i]);
    j["recall"][std::to_string(rr.ks[i])] = rr.recall[i];
  }
  write_text_file(out / "retrieval.json", j.dump(2) + "\n");
  return 0;
}

json diagnose_one(const RunConfig& cfg, const std::string& ckpt, const fs::path& out,
                  bool force) {
  Trainer t = restore(cfg, ckpt, force);
  const auto& em = t.model().enc.model;
  const auto& ps = t.model().enc.query;
  const EvalConfig& ev = cfg.eval;
  Rng seeds(ev.seed);

  auto aff_specs = eval_dataset(ev.affinity_clips, ev.seed, 14);
  AffinityResult ar = affinity(em, ps, aff_specs, ev.affinity_clips, cfg.train.raw_frames,
                               cfg.train.pipe.aug, seeds.fork(16).next_u64());
  write_text_file(out / "affinity.csv", matrix_csv(ar.matrix));

  auto tem_specs = eval_dataset(ev.temporal_videos, ev.seed, 15);
  TemporalStats ts = temporal_similarity_stats(em, ps, tem_specs, cfg.train.raw_frames,
                                               cfg.train.pipe.aug, ev.temporal_clips);

  MaskEval me = mask_quality(em, ps, aff_specs, ev.affinity_clips, cfg.train.raw_frames,
                             cfg.train.pipe, seeds.fork(17).next_u64());

  json j{{"checkpoint", ckpt},
         {"affinity_diag_dominance", ar.diag_dominance},
         {"temporal_mean", ts.mean},
         {"temporal_std", ts.stddev},
         {"temporal_samples", int(ts.samples.size())},
         {"mask_iou", me.iou},
         {"mask_iou_random", me.random_iou}};
  write_text_file(out / "diagnostics.json", j.dump(2) + "\n");
  std::printf("%s\n  affinity diag dominance %.4f | temporal sim %.4f +- %.4f | mask iou %.4f (random %.4f)\n",
              ckpt.c_str(), ar.diag_dominance, ts.mean, ts.stddev, me.iou, me.random_iou);
  return j;
}

int cmd_diagnose(const RunConfig& cfg, const std::string& ckpt_a, const std::string& ckpt_b,
                 const fs::path& out, bool force) {
  if (ckpt_b.empty()) {
    diagnose_one(cfg, ckpt_a, out, force);
    return 0;
  }
  json a = diagnose_one(cfg, ckpt_a, out / "a", force);
  json b = diagnose_one(cfg, ckpt_b, out / "b", force);
  json cmp{{"a", a},
           {"b", b},
           {"delta",
            {{"affinity_diag_dominance", double(a["affinity_diag_dominance"]) -
                                             double(b["affinity_diag_dominance"])},
             {"temporal_std", double(a["temporal_std"]) - double(b["temporal_std"])},
             {"mask_iou", double(a["mask_iou"]) - double(b["mask_iou"])}}}};
  write_text_file(out / "comparison.json", cmp.dump(2) + "\n");
  return 0;
}

int cmd_export(const RunConfig& cfg, const std::string& ckpt, const fs::path& out, bool force) {
  Trainer t = restore(cfg, ckpt, force);
  auto specs = eval_dataset(cfg.eval.export_clips, cfg.eval.seed, 18);
  auto files = export_caam(t.model().enc.model, t.model().enc.query, specs,
                           cfg.eval.export_clips, cfg.train.raw_frames, cfg.train.pipe,
                           (out / "panels").string());
  std::printf("wrote %d panel files under %s\n", int(files.size()),
              (out / "panels").string().c_str());
  return 0;
}

struct SweepRow {
  std::string label;
  double probe_top1 = 0, final_loss = 0, mask_iou = 0, mask_iou_random = 0;
};

std::string sweep_csv(const SweepPreset& p, const std::vector<SweepRow>& rows) {
  std::string s = "variant,probe_top1,final_loss,mask_iou,mask_iou_random\n";
  char buf[160];
  for (const SweepRow& r : rows) {
    std::snprintf(buf, sizeof(buf), "%s,%.6f,%.6f,%.6f,%.6f\n", r.label.c_str(), r.probe_top1,
                  r.final_loss, r.mask_iou, r.mask_iou_random);
    s += buf;
  }
  (void)p;
  return s;
}

std::string sweep_table(const SweepPreset& p, const std::vector<SweepRow>& rows) {
  size_t w = p.dimension.size();
  for (const SweepRow& r : rows) w = std::max(w, r.label.size());
  std::ostringstream os;
  os << "sweep: " << p.name << "\n";
  char buf[200];
  std::snprintf(buf, sizeof(buf), "%-*s  %10s  %10s  %9s  %9s\n", int(w), p.dimension.c_str(),
                "probe_top1", "final_loss", "mask_iou", "rand_iou");
  os << buf;
  os << std::string(w + 46, '-') << "\n";
  for (const SweepRow& r : rows) {
    std::snprintf(buf, sizeof(buf), "%-*s  %10.4f  %10.4f  %9.4f  %9.4f\n", int(w),
                  r.label.c_str(), r.probe_top1, r.final_loss, r.mask_iou, r.mask_iou_random);
    os << buf;
  }
  return os.str();
}

int cmd_ablate(const RunConfig& base, const std::string& preset_name, const fs::path& out) {
  const SweepPreset* preset = find_preset(preset_name);
  if (!preset) throw ConfigError("unknown preset '" + preset_name + "'");

  fs::create_directories(out);
  write_text_file(out / "base-config.ini", serialize_config(base));
  auto train_specs = eval_dataset(base.eval.probe_train, base.eval.seed, 10);
  auto test_specs = eval_dataset(base.eval.probe_test, base.eval.seed, 11);
  Rng seeds(base.eval.seed);
  auto mask_specs = eval_dataset(base.eval.affinity_clips, base.eval.seed, 14);
  uint64_t mask_seed = seeds.fork(17).next_u64();

  std::vector<SweepRow> rows;
  for (const SweepVariant& v : preset->variants) {
    std::printf("=== %s: %s ===\n", preset->name.c_str(), v.label.c_str());
    std::fflush(stdout);
    RunConfig cfg = base;
    apply_config(cfg, v.overrides);
    resolve_config(cfg);
    fs::path vdir = out / ("variant-" + v.label);
    SweepRow row;
    row.label = v.label;
    row.final_loss = run_pretrain(cfg, vdir);

    Trainer t = restore(cfg, (vdir / "checkpoint.bin").string(), false);
    const auto& em = t.model().enc.model;
    const auto& ps = t.model().enc.query;
    ProbeResult pr = linear_probe(em, ps, train_specs, test_specs, cfg.train.raw_frames,
                                  cfg.train.pipe.aug, probe_config(cfg.eval, true));
    row.probe_top1 = pr.top1;
    MaskEval me = mask_quality(em, ps, mask_specs, base.eval.affinity_clips,
                               cfg.train.raw_frames, cfg.train.pipe, mask_seed);
    row.mask_iou = me.iou;
    row.mask_iou_random = me.random_iou;
    rows.push_back(row);
  }

  write_text_file(out / "results.csv", sweep_csv(*preset, rows));
  std::string table = sweep_table(*preset, rows);
  write_text_file(out / "results.txt", table);
  std::printf("\n%s", table.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fine-grained motion-aligned contrastive video pretraining on synthetic clips"};
  app.require_subcommand(1);

  std::string config_path, out_root, preset, ckpt, ckpt_b;
  uint64_t seed = 0;
  bool force = false;

  auto add_common = [&](CLI::App* sc) {
    sc->add_option("--config", config_path, "run configuration file (key = value sections)");
    sc->add_option("--out", out_root, "output root (default: $MOTIONALIGN_OUT, then ./runs)");
    sc->add_option("--seed", seed, "override the run seed");
    sc->add_flag("--force", force, "accept checkpoints whose configuration hash differs");
  };

  CLI::App* sc_pretrain = app.add_subcommand("pretrain", "train a model from scratch");
  add_common(sc_pretrain);
  CLI::App* sc_probe =
      app.add_subcommand("probe", "linear-probe and fine-tune classification accuracy");
  sc_probe->add_option("ckpt", ckpt, "checkpoint file")->required();
  add_common(sc_probe);
  CLI::App* sc_retrieve = app.add_subcommand("retrieve", "video retrieval recall@k");
  sc_retrieve->add_option("ckpt", ckpt, "checkpoint file")->required();
  add_common(sc_retrieve);
  CLI::App* sc_diagnose = app.add_subcommand(
      "diagnose", "spatial affinity, temporal similarity, and mask quality diagnostics");
  sc_diagnose->add_option("ckpt", ckpt, "checkpoint file")->required();
  sc_diagnose->add_option("ckpt_b", ckpt_b, "optional second checkpoint to compare against");
  add_common(sc_diagnose);
  CLI::App* sc_export = app.add_subcommand("export", "write activation-map image panels");
  sc_export->add_option("ckpt", ckpt, "checkpoint file")->required();
  add_common(sc_export);
  CLI::App* sc_ablate = app.add_subcommand("ablate", "run a named configuration sweep");
  sc_ablate->add_option("--preset", preset, "sweep preset name")->required();
  add_common(sc_ablate);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    CLI::App* sc = app.get_subcommands().front();
    RunConfig cfg;
    if (!config_path.empty()) apply_config(cfg, parse_ini(read_text_file(config_path)));
    if (sc->count("--seed") > 0) {
      // the run seed feeds pretraining; evaluation commands have their own
      if (sc == sc_pretrain || sc == sc_ablate)
        cfg.train.seed = seed;
      else
        cfg.eval.seed = seed;
    }
    resolve_config(cfg);
    fs::path root = resolve_out_root(out_root);

    if (sc == sc_pretrain) {
      run_pretrain(cfg, root / "pretrain");
      return 0;
    }
    if (sc == sc_probe) {
      fs::create_directories(root / "probe");
      write_text_file(root / "probe" / "config.ini", serialize_config(cfg));
      return cmd_probe(cfg, ckpt, root / "probe", force);
    }
    if (sc == sc_retrieve) {
      fs::create_directories(root / "retrieve");
      write_text_file(root / "retrieve" / "config.ini", serialize_config(cfg));
      return cmd_retrieve(cfg, ckpt, root / "retrieve", force);
    }
    if (sc == sc_diagnose) {
      fs::create_directories(root / "diagnose");
      write_text_file(root / "diagnose" / "config.ini", serialize_config(cfg));
      return cmd_diagnose(cfg, ckpt, ckpt_b, root / "diagnose", force);
    }
    if (sc == sc_export) {
      fs::create_directories(root / "export");
      write_text_file(root / "export" / "config.ini", serialize_config(cfg));
      return cmd_export(cfg, ckpt, root / "export", force);
    }
    return cmd_ablate(cfg, preset, root / "ablate" / preset);
  } catch (const ConfigError& ex) {
    std::fprintf(stderr, "config error: %s\n", ex.what());
    return 2;
  } catch (const CheckpointError& ex) {
    std::fprintf(stderr, "checkpoint error: %s\n", ex.what());
    return 3;
  } catch (const IoError& ex) {
    std::fprintf(stderr, "i/o error: %s\n", ex.what());
    return 3;
  } catch (const fs::filesystem_error& ex) {
    std::fprintf(stderr, "i/o error: %s\n", ex.what());
    return 3;
  } catch (const NumericError& ex) {
    std::fprintf(stderr, "numerical abort: %s\n", ex.what());
    return 4;
  } catch (const std::exception& ex) {
    std::fprintf(stderr, "error: %s\n", ex.what());
    return 1;
  }
}
