#include "rainshield/runner.hpp"

#include <omp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "rainshield/hash.hpp"
#include "rainshield/image_io.hpp"
#include "rainshield/losses.hpp"
#include "rainshield/plot.hpp"

namespace rainshield {

namespace fs = std::filesystem;

std::pair<int, std::string> classify_error(const std::exception& e) {
  int code = kExitFailure;
  std::string kind = "runtime_error";
  if (dynamic_cast<const ConfigError*>(&e)) {
    code = kExitConfig;
    kind = "config_error";
  } else if (dynamic_cast<const MissingArtifactError*>(&e)) {
    code = kExitMissingArtifact;
    kind = "missing_artifact";
  } else if (dynamic_cast<const CheckpointError*>(&e) || dynamic_cast<const DatasetError*>(&e)) {
    code = kExitMissingArtifact;
    kind = "bad_artifact";
  } else if (dynamic_cast<const DivergenceError*>(&e)) {
    code = kExitDivergence;
    kind = "divergence";
  } else if (dynamic_cast<const RunDirConflict*>(&e)) {
    code = kExitRunDirConflict;
    kind = "run_dir_conflict";
  }
  std::string msg = e.what();
  for (auto& ch : msg)
    if (ch == '"') ch = '\'';
    else if (ch == '\n' || ch == '\r') ch = ' ';
  return {code, "error code=" + std::to_string(code) + " kind=" + kind + " message=\"" + msg + "\""};
}

Regime parse_regime(std::string_view s) {
  if (s == "at") return Regime::at;
  if (s == "nat") return Regime::nat;
  if (s == "pearl") return Regime::pearl;
  if (s == "pearl-ama" || s == "pearl_ama") return Regime::pearl_ama;
  throw ConfigError("unknown regime '" + std::string(s) + "' (expected at, nat, pearl, pearl-ama)");
}

std::string_view to_string(Regime r) {
  switch (r) {
    case Regime::at: return "at";
    case Regime::nat: return "nat";
    case Regime::pearl: return "pearl";
    case Regime::pearl_ama: return "pearl-ama";
  }
  return "at";
}

namespace {

std::string snapshot_text(const Json& cfg) { return cfg.dump(2) + "\n"; }

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::string config_hash(const Json& cfg) {
  Fnv1a h;
  h.update(snapshot_text(cfg));
  return h.hex();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

}  // namespace

Run Run::open(const Json& config, const std::optional<fs::path>& run_dir, bool overwrite) {
  Run r;
  r.config_ = config;
  r.rc_ = parse_run_config(config);
  r.overwrite_ = overwrite;
  r.layout_.root = run_dir ? *run_dir : fs::path(r.rc_.output_root) / r.rc_.run_name;
  const auto snap = r.layout_.snapshot();
  const auto text = snapshot_text(config);
  if (fs::exists(snap) && read_file(snap) != text && !overwrite)
    throw RunDirConflict(r.layout_.root.string() +
                         " was created with a different config; use a fresh run dir or --overwrite");
  for (const auto& d : {r.layout_.root, r.layout_.checkpoints(), r.layout_.metrics(), r.layout_.images(),
                        r.layout_.logs()}) {
    std::error_code ec;
    fs::create_directories(d, ec);
    if (ec) throw IoError(d.string() + ": cannot create directory: " + ec.message());
  }
  if (!fs::exists(snap) || read_file(snap) != text) {
    std::ofstream out(snap, std::ios::binary);
    out << text;
    if (!out) throw IoError(snap.string() + ": cannot write config snapshot");
  }
  if (r.rc_.threads > 0) omp_set_num_threads(r.rc_.threads);
  return r;
}

void Run::log(const std::string& line) const {
  std::ofstream out(layout_.logs() / (log_name_ + ".log"), std::ios::app);
  out << line << '\n';
  if (!quiet_) std::cerr << "[" << log_name_ << "] " << line << std::endl;
}

void Run::claim(const fs::path& path) const {
  if (!fs::exists(path)) return;
  if (!overwrite_)
    throw RunDirConflict(path.string() + " already exists; use a fresh run dir or --overwrite");
  fs::remove_all(path);
}

void Run::require(const fs::path& path, const std::string& produced_by) const {
  if (!fs::exists(path))
    throw MissingArtifactError(path.string() + " not found (produced by `" + produced_by + "`)");
}

Dataset Run::load_split(const std::string& split) const {
  require(layout_.data(split) / "manifest.txt", "synth");
  return load_dataset(layout_.data(split));
}

void cmd_synth(Run& run) {
  run.set_log_name("synth");
  const auto t0 = std::chrono::steady_clock::now();
  const auto& d = run.rc().data;
  const std::pair<const char*, Dataset (DataSpec::*)() const> splits[] = {
      {"train", &DataSpec::make_train}, {"val", &DataSpec::make_val}, {"test", &DataSpec::make_test}};
  for (const auto& [name, make] : splits) run.claim(run.layout().data(name));
  for (const auto& [name, make] : splits) {
    const Dataset ds = (d.*make)();
    double p = 0.0;
    for (const auto& s : ds.samples) p += psnr(s.rainy, s.clean);
    save_dataset(run.layout().data(name), ds);
    run.log(std::string(name) + ": " + std::to_string(ds.size()) + " samples, rainy PSNR " +
            fmt("%.2f", p / static_cast<double>(ds.size())) + " dB");
  }
  run.log("done in " + fmt("%.1f", seconds_since(t0)) + " s");
}

namespace {

std::string csv_num(double v, const char* f = "%.6f") {
  if (!std::isfinite(v)) return "";
  return fmt(f, v);
}

// Per-epoch log; seconds are left out so reruns produce identical files.
class EpochCsv {
 public:
  EpochCsv(const Run& run, const std::string& name, bool derain, bool attacked)
      : run_(run), path_(run.layout().metrics() / (name + "_epochs.csv")), derain_(derain) {
    const std::string suffix = attacked ? "_attacked" : "";
    header_ = derain ? "epoch,L_def,PSNR" + suffix + ",mIoU" + suffix : "epoch,loss,allAcc" + suffix + ",mIoU" + suffix;
  }
  void claim() const { run_.claim(path_); }
  void add(const EpochRecord& r) {
    rows_ += std::to_string(r.epoch) + "," + csv_num(r.loss, "%.8f") + "," +
             csv_num(derain_ ? r.val_psnr : r.val_allacc) + "," + csv_num(r.val_miou) + "\n";
    std::ofstream out(path_, std::ios::binary);
    out << header_ << "\n" << rows_;
  }
  void finish() {
    if (rows_.empty()) std::ofstream(path_, std::ios::binary) << header_ << "\n";
  }

 private:
  const Run& run_;
  fs::path path_;
  bool derain_;
  std::string header_;
  std::string rows_;
};

TrainHooks hooks_for(const Run& run, const Dataset& val, EpochCsv& csv, const char* score) {
  TrainHooks h;
  h.validation = &val;
  h.on_epoch = [&run, &csv, score](const EpochRecord& r, std::span<const float>) {
    csv.add(r);
    run.log("epoch " + std::to_string(r.epoch) + " loss " + fmt("%.5f", r.loss) + " val " + score + " " +
            fmt("%.4f", std::string(score) == "PSNR" ? r.val_psnr : r.val_allacc) + " mIoU " +
            fmt("%.4f", r.val_miou) + " (" + fmt("%.1f", r.seconds) + " s)");
  };
  return h;
}

SegNet<float> load_seg(const Run& run, const std::string& name, const SegDescriptor& desc,
                       const std::string& producer) {
  const auto p = run.layout().checkpoint(name);
  run.require(p, producer);
  return load_seg_checkpoint(p, &desc);
}

DerainNet<float> load_derain(const Run& run, const std::string& name, const std::string& producer) {
  const auto p = run.layout().checkpoint(name);
  run.require(p, producer);
  return load_derain_checkpoint(p, &run.rc().models.derain);
}

void log_result(const Run& run, const TrainResult& r, const fs::path& ckpt) {
  run.log("best epoch " + std::to_string(r.best_epoch) + ", " + std::to_string(r.batches) + " batches; wrote " +
          ckpt.string());
}

}  // namespace

void cmd_pretrain(Run& run, const std::string& kind) {
  if (kind != "seg" && kind != "derain" && kind != "alt-seg")
    throw ConfigError("unknown pretrain kind '" + kind + "' (expected seg, derain, alt-seg)");
  run.set_log_name("pretrain_" + kind);
  const auto t0 = std::chrono::steady_clock::now();
  const auto& rc = run.rc();
  const std::string name = kind == "alt-seg" ? "alt_seg" : kind;
  const auto ckpt = run.layout().checkpoint(name);
  const bool derain = kind == "derain";
  EpochCsv csv(run, derain ? "pretrain_derain" : "pretrain_" + name, derain, false);
  run.claim(ckpt);
  csv.claim();
  const Dataset train = run.load_split("train");
  const Dataset val = run.load_split("val");
  if (derain) {
    DerainNet<float> model(rc.models.derain, rc.models.derain_seed);
    auto h = hooks_for(run, val, csv, "PSNR");
    const auto r = pretrain_derain(model, train, rc.pretrain_derain, h);
    save_checkpoint(ckpt, model, config_hash(run.config()));
    log_result(run, r, ckpt);
  } else {
    const bool alt = kind == "alt-seg";
    SegNet<float> model(alt ? rc.models.alt_seg : rc.models.seg, alt ? rc.models.alt_seg_seed : rc.models.seg_seed);
    auto h = hooks_for(run, val, csv, "allAcc");
    const auto r = pretrain_seg(model, train, alt ? rc.alt_seg : rc.pretrain_seg, h);
    save_checkpoint(ckpt, model, config_hash(run.config()));
    log_result(run, r, ckpt);
  }
  csv.finish();
  run.log("done in " + fmt("%.1f", seconds_since(t0)) + " s");
}

void cmd_train(Run& run, Regime regime) {
  run.set_log_name(std::string("train_") + std::string(to_string(regime)));
  const auto t0 = std::chrono::steady_clock::now();
  const auto& rc = run.rc();
  const auto& L = run.layout();

  if (regime == Regime::nat) {
    const auto manifest = L.checkpoints() / "nat.json";
    run.claim(manifest);
    auto derain = std::make_shared<const DerainNet<float>>(load_derain(run, "derain", "pretrain --kind derain"));
    auto robust =
        std::make_shared<const SegNet<float>>(load_seg(run, "robust_seg", rc.models.seg, "train --regime at"));
    const Pipeline nat = assemble_nat(derain, robust);
    const auto stages = nat.stages();
    if (stages.size() != 2 || stages.front() != Pipeline::Stage::derain)
      throw std::logic_error("nat: composition order must be derain then seg");
    // one forward pass as a smoke check of the composed shapes
    const Dataset val = run.load_split("val");
    const std::vector<std::size_t> one{0};
    const auto pred = nat.predict(batch_images(val, one, &PairedSample::rainy));
    if (pred.size() != 1 || pred[0].h != val.scene.height || pred[0].w != val.scene.width)
      throw std::logic_error("nat: composed pipeline produced a malformed prediction");
    Json m{{"pipeline", "nat"},
           {"stages", {"derain", "seg"}},
           {"derain", {{"checkpoint", "derain.ckpt"}, {"param_hash", Fnv1a::to_hex(derain->param_hash())}}},
           {"seg", {{"checkpoint", "robust_seg.ckpt"}, {"param_hash", Fnv1a::to_hex(robust->param_hash())}}}};
    std::ofstream(manifest, std::ios::binary) << m.dump(2) << "\n";
    run.log("assembled nat from derain.ckpt and robust_seg.ckpt; wrote " + manifest.string());
    return;
  }

  const Dataset train = run.load_split("train");
  const Dataset val = run.load_split("val");
  if (regime == Regime::at) {
    const auto ckpt = L.checkpoint("robust_seg");
    EpochCsv csv(run, "at", false, true);
    run.claim(ckpt);
    csv.claim();
    SegNet<float> model = load_seg(run, "seg", rc.models.seg, "pretrain --kind seg");
    auto h = hooks_for(run, val, csv, "allAcc");
    const auto r = train_at(model, train, rc.at, h);
    save_checkpoint(ckpt, model, config_hash(run.config()));
    csv.finish();
    log_result(run, r, ckpt);
  } else {
    const bool ama = regime == Regime::pearl_ama;
    const std::string name = ama ? "pearl_ama" : "pearl";
    const auto ckpt = L.checkpoint(name);
    EpochCsv csv(run, name, true, true);
    run.claim(ckpt);
    csv.claim();
    const SegNet<float> seg = load_seg(run, "seg", rc.models.seg, "pretrain --kind seg");
    DerainNet<float> model = load_derain(run, "derain", "pretrain --kind derain");
    auto h = hooks_for(run, val, csv, "PSNR");
    const auto r = ama ? train_pearl_ama(model, seg, train, rc.pearl_ama, h) : train_pearl(model, seg, train, rc.pearl, h);
    save_checkpoint(ckpt, model, config_hash(run.config()));
    csv.finish();
    log_result(run, r, ckpt);
  }
  run.log("done in " + fmt("%.1f", seconds_since(t0)) + " s");
}

std::vector<Pipeline> load_pipelines(const Run& run, const std::vector<std::string>& names) {
  const auto& rc = run.rc();
  std::map<std::string, std::shared_ptr<const SegNet<float>>> segs;
  std::map<std::string, std::shared_ptr<const DerainNet<float>>> derains;
  const auto seg = [&](const std::string& n, const std::string& by) {
    if (!segs.count(n)) segs[n] = std::make_shared<const SegNet<float>>(load_seg(run, n, rc.models.seg, by));
    return segs[n];
  };
  const auto der = [&](const std::string& n, const std::string& by) {
    if (!derains.count(n)) derains[n] = std::make_shared<const DerainNet<float>>(load_derain(run, n, by));
    return derains[n];
  };
  std::vector<Pipeline> out;
  for (const auto& n : names) {
    if (n == "seg") {
      out.emplace_back(n, seg("seg", "pretrain --kind seg"));
    } else if (n == "robust_seg") {
      out.emplace_back(n, seg("robust_seg", "train --regime at"));
    } else if (n == "derain_seg") {
      out.emplace_back(n, seg("seg", "pretrain --kind seg"), der("derain", "pretrain --kind derain"));
    } else if (n == "nat") {
      run.require(run.layout().checkpoints() / "nat.json", "train --regime nat");
      out.emplace_back(n, seg("robust_seg", "train --regime at"), der("derain", "pretrain --kind derain"));
    } else if (n == "pearl") {
      out.emplace_back(n, seg("seg", "pretrain --kind seg"), der("pearl", "train --regime pearl"));
    } else if (n == "pearl_ama") {
      out.emplace_back(n, seg("seg", "pretrain --kind seg"), der("pearl_ama", "train --regime pearl-ama"));
    } else {
      throw ConfigError("unknown pipeline '" + n + "'");
    }
  }
  return out;
}

namespace {

// The strongest configured attack: most steps at the largest budget.
GridCell headline_cell(const std::vector<GridCell>& grid) {
  GridCell best;
  for (const auto& c : grid) {
    if (!c.attack) continue;
    if (!best.attack || c.epsilon() > best.epsilon() ||
        (c.epsilon() == best.epsilon() && c.attack->method == AttackMethod::bim &&
         (best.attack->method != AttackMethod::bim || c.attack->steps > best.attack->steps)))
      best = c;
  }
  return best;
}

}  // namespace

MetricsReport cmd_eval(Run& run) {
  run.set_log_name("eval");
  const auto t0 = std::chrono::steady_clock::now();
  const auto& rc = run.rc();
  const auto& L = run.layout();
  const auto& es = rc.eval;
  const auto per_class_csv = L.metrics() / "per_class.csv";
  const auto summary = L.metrics() / "summary.txt";
  const auto qual = L.images() / "qualitative";
  run.claim(L.eval_csv());
  run.claim(summary);
  if (es.cross_model) run.claim(L.cross_csv());
  if (es.per_class) run.claim(per_class_csv);
  if (es.qualitative_samples > 0) run.claim(qual);

  const auto pipes = load_pipelines(run, es.pipelines);
  std::shared_ptr<const SegNet<float>> alt;
  std::vector<Pipeline> cross_pipes;
  if (es.cross_model) {
    alt = std::make_shared<const SegNet<float>>(load_seg(run, "alt_seg", rc.models.alt_seg, "pretrain --kind alt-seg"));
    cross_pipes = load_pipelines(run, es.cross_model_pipelines);
  }
  const Dataset test = run.load_split("test");

  BudgetAudit audit;
  auto report = evaluate_defense(pipes, test, es.grid, es.options, &audit);
  report.set_meta("robust_seg_training_input", rc.at.seg_input == SegInput::clean ? "clean" : "rainy");
  report.set_meta("config_hash", config_hash(run.config()));
  report.set_meta("budget_audit_inputs", std::to_string(audit.inputs_checked));
  report.set_meta("budget_audit_max_linf", fmt("%.9g", audit.max_linf));
  write_report_csv(L.eval_csv(), report);
  const auto table = format_summary_table(report);
  std::ofstream(summary, std::ios::binary) << table;
  run.log("budget audit: " + std::to_string(audit.inputs_checked) + " attacked inputs, max |x_adv - I| " +
          fmt("%.9g", audit.max_linf));
  run.log("wrote " + L.eval_csv().string() + "\n" + table);

  if (es.cross_model) {
    auto cross = cross_model_eval(cross_pipes, alt, test, es.grid, es.options);
    cross.set_meta("config_hash", config_hash(run.config()));
    write_report_csv(L.cross_csv(), cross);
    run.log("cross-model evaluation with " + alt->descriptor().str() + "\n" + format_summary_table(cross));
  }

  const GridCell head = headline_cell(es.grid);
  if (es.per_class) {
    std::vector<PerClassReport> reps;
    for (const auto& p : pipes) {
      reps.push_back(per_class_report(p, test, GridCell::none(), es.options.seeds.front(), es.options));
      if (head.attack) reps.push_back(per_class_report(p, test, head, es.options.seeds.front(), es.options));
    }
    write_per_class_csv(per_class_csv, reps);
  }
  if (es.qualitative_samples > 0) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < std::min<std::size_t>(test.size(), es.qualitative_samples); ++i) idx.push_back(i);
    for (const auto& p : pipes) qualitative_dump(p, test, idx, head, qual, es.options.seeds.front());
  }
  run.log("done in " + fmt("%.1f", seconds_since(t0)) + " s");
  return report;
}

namespace {

struct Curve {
  std::vector<std::string> ticks;
  std::vector<std::pair<std::string, double>> cells;  // (attack, eps) per tick
};

void emit_plot(const fs::path& path, const std::string& title, const std::string& xlab, const std::string& ylab,
               const Curve& cv, const MetricsReport& rep, Metric m, double scale) {
  LinePlot lp;
  lp.title = title;
  lp.x_label = xlab;
  lp.y_label = ylab;
  lp.x_ticks = cv.ticks;
  for (const auto& p : rep.pipelines()) {
    PlotSeries s{p, {}};
    for (const auto& [a, e] : cv.cells) {
      double v = std::nan("");
      try {
        v = scale * rep.seed_mean(p, a, e, m);
      } catch (const std::out_of_range&) {
      }
      s.y.push_back(v);
    }
    lp.series.push_back(std::move(s));
  }
  write_png(path, render_line_plot(lp));
}

std::string eps_tick(double e) { return std::to_string(std::lround(e * 255.0)) + "/255"; }

}  // namespace

MetricsReport cmd_report(const std::vector<fs::path>& run_dirs, const fs::path& out_dir, bool overwrite) {
  if (run_dirs.empty()) throw ConfigError("report: no run directories given");
  std::vector<MetricsReport> reps;
  std::map<std::string, int> seen;
  for (const auto& d : run_dirs) {
    const RunLayout L{d};
    if (!fs::exists(L.eval_csv()))
      throw MissingArtifactError(L.eval_csv().string() + " not found (produced by `eval`)");
    reps.push_back(read_report_csv(L.eval_csv()));
    for (const auto& p : reps.back().pipelines()) ++seen[p];
  }
  const bool clash = std::any_of(seen.begin(), seen.end(), [](const auto& kv) { return kv.second > 1; });
  MetricsReport merged;
  for (std::size_t i = 0; i < reps.size(); ++i) {
    auto r = reps[i];
    if (clash) {
      const auto tag = run_dirs[i].filename().empty() ? run_dirs[i].parent_path().filename() : run_dirs[i].filename();
      for (auto& row : r.rows) row.pipeline = tag.string() + ":" + row.pipeline;
    }
    if (i == 0) {
      merged = r;
    } else {
      merged.rows.insert(merged.rows.end(), r.rows.begin(), r.rows.end());
      if (r.meta("dataset_hash") != merged.meta("dataset_hash")) merged.set_meta("dataset_hash", "mixed");
    }
  }
  merged.set_meta("merged_runs", std::to_string(run_dirs.size()));

  const auto csv = out_dir / "metrics_merged.csv";
  const auto summary = out_dir / "summary.txt";
  const auto plots = out_dir / "plots";
  for (const auto& p : {csv, summary, plots})
    if (fs::exists(p)) {
      if (!overwrite) throw RunDirConflict(p.string() + " already exists; use --overwrite");
      fs::remove_all(p);
    }
  fs::create_directories(plots);
  write_report_csv(csv, merged);
  std::ofstream(summary, std::ios::binary) << format_summary_table(merged);

  // metric vs budget per attack (clean cell at eps 0), and vs steps for bim
  std::set<double> eps_set;
  std::vector<std::string> attacks;
  std::map<double, std::vector<std::pair<int, std::string>>> bim_steps;
  bool has_clean = false;
  for (const auto& r : merged.rows) {
    if (r.attack == "none") {
      has_clean = true;
      continue;
    }
    eps_set.insert(r.epsilon);
    if (std::find(attacks.begin(), attacks.end(), r.attack) == attacks.end()) attacks.push_back(r.attack);
    if (r.attack.rfind("bim", 0) == 0) {
      auto& v = bim_steps[r.epsilon];
      const std::pair<int, std::string> k{std::stoi(r.attack.substr(3)), r.attack};
      if (std::find(v.begin(), v.end(), k) == v.end()) v.push_back(k);
    }
  }
  const std::pair<Metric, std::string> metrics[] = {{Metric::miou, "mIoU"}, {Metric::psnr, "PSNR"}};
  for (const auto& a : attacks) {
    Curve cv;
    if (has_clean) cv.ticks.push_back("0"), cv.cells.emplace_back("none", 0.0);
    for (double e : eps_set) cv.ticks.push_back(eps_tick(e)), cv.cells.emplace_back(a, e);
    for (const auto& [m, mname] : metrics)
      emit_plot(plots / (mname + "_vs_eps_" + a + ".png"), mname + " vs budget, " + a, "epsilon", mname, cv, merged,
                m, m == Metric::miou ? 100.0 : 1.0);
  }
  for (auto& [e, steps] : bim_steps) {
    std::sort(steps.begin(), steps.end());
    Curve cv;
    if (has_clean) cv.ticks.push_back("0"), cv.cells.emplace_back("none", 0.0);
    for (const auto& [k, a] : steps) cv.ticks.push_back(std::to_string(k)), cv.cells.emplace_back(a, e);
    for (const auto& [m, mname] : metrics)
      emit_plot(plots / (mname + "_vs_steps_bim_eps" + std::to_string(std::lround(e * 255.0)) + ".png"),
                mname + " vs bim steps, eps " + eps_tick(e), "steps", mname, cv, merged, m,
                m == Metric::miou ? 100.0 : 1.0);
  }
  return merged;
}

namespace {

Raster signed_map(const Image& d, float scale) {
  Image v = Image::like(d);
  for (std::size_t i = 0; i < d.size(); ++i)
    v.data[i] = std::clamp(0.5f + (scale > 0 ? d.data[i] / (2.0f * scale) : 0.0f), 0.0f, 1.0f);
  return to_raster(v);
}

}  // namespace

std::vector<fs::path> cmd_attack_demo(Run& run, const std::optional<fs::path>& image, std::size_t sample) {
  run.set_log_name("attack_demo");
  const auto& rc = run.rc();
  const auto out = run.layout().images() / "attack_demo";
  const SegNet<float> seg = load_seg(run, "seg", rc.models.seg, "pretrain --kind seg");
  Image x, clean;
  std::vector<LabelMap> y;
  std::string stem;
  if (image) {
    if (!fs::exists(*image)) throw MissingArtifactError(image->string() + " not found");
    x = from_raster(read_png(*image));
    if (x.c != 3 || x.h % 8 != 0 || x.w % 8 != 0)
      throw ConfigError(image->string() + ": expected an RGB image with sides divisible by 8");
    clean = x;
    // no ground truth: attack the model's own prediction
    y = argmax_labels(seg.forward(x));
    stem = image->stem().string();
  } else {
    const Dataset test = run.load_split("test");
    if (sample >= test.size()) throw ConfigError("attack-demo: sample index out of range");
    const std::vector<std::size_t> idx{sample};
    x = batch_images(test, idx, &PairedSample::rainy);
    clean = batch_images(test, idx, &PairedSample::clean);
    y = batch_labels(test, idx);
    char buf[32];
    std::snprintf(buf, sizeof buf, "test_%05zu", sample);
    stem = buf;
  }
  const auto base = out / stem;
  std::error_code ec;
  fs::create_directories(out, ec);
  for (const char* s : {"_input.png", "_attacked.png", "_delta_n.png", "_delta_m.png", "_sign_step1.png",
                        "_pred_clean.png", "_pred_attacked.png"})
    run.claim(base.string() + s);

  const AttackSpec spec = rc.pearl.train_attack;
  const SegTarget target(seg);
  NaaTrace trace;
  const Image dn = naa_generate(target, x, y, spec, &trace);
  const Image dm = ama_generate(target, clean, y, spec, rc.pearl_ama.ama_variant, &trace);
  const Image adv = perturb(x, dn);
  const auto before = argmax_labels(seg.forward(x));
  const auto after = argmax_labels(seg.forward(adv));
  std::vector<fs::path> written;
  const auto emit = [&](const char* suffix, const Raster& r) {
    const fs::path p = base.string() + suffix;
    write_png(p, r);
    written.push_back(p);
  };
  emit("_input.png", to_raster(x));
  emit("_attacked.png", to_raster(adv));
  emit("_delta_n.png", signed_map(dn, spec.epsilon));
  emit("_delta_m.png", signed_map(dm, spec.epsilon));
  emit("_sign_step1.png", signed_map(trace.signs.front(), 1.0f));
  emit("_pred_clean.png", label_raster(before[0]));
  emit("_pred_attacked.png", label_raster(after[0]));
  const auto loss_x = target.evaluate(x, y, AttackLoss::cross_entropy, 0.0f, nullptr);
  const auto loss_adv = target.evaluate(adv, y, AttackLoss::cross_entropy, 0.0f, nullptr);
  const auto loss_m = target.evaluate(perturb(clean, dm), y, AttackLoss::cross_entropy, 0.0f, nullptr);
  const auto loss_c = target.evaluate(clean, y, AttackLoss::cross_entropy, 0.0f, nullptr);
  run.log(spec.name() + " eps " + fmt("%.5f", spec.epsilon) + ": loss " + fmt("%.4f", loss_x[0]) + " -> " +
          fmt("%.4f", loss_adv[0]) + "; mirror on clean " + fmt("%.4f", loss_c[0]) + " -> " + fmt("%.4f", loss_m[0]));
  return written;
}

RainCalibration cmd_calibrate_rain(Run& run, int samples, double target_psnr) {
  run.set_log_name("calibrate_rain");
  const auto path = run.layout().metrics() / "calibration.json";
  run.claim(path);
  const auto& d = run.rc().data;
  const auto c = calibrate_rain(d.scene, d.rain, samples, target_psnr);
  Json j{{"target_psnr", target_psnr},
         {"samples", samples},
         {"psnr", c.psnr},
         {"ssim", c.ssim},
         {"iterations", c.iterations},
         {"overrides", {{"data.rain.intensity", c.rain.intensity}}}};
  std::ofstream(path, std::ios::binary) << j.dump(2) << "\n";
  run.log("intensity " + fmt("%.6f", c.rain.intensity) + " gives PSNR " + fmt("%.3f", c.psnr) + " dB, SSIM " +
          fmt("%.4f", c.ssim) + "; wrote " + path.string());
  return c;
}

void cmd_all(Run& run) {
  cmd_synth(run);
  cmd_pretrain(run, "seg");
  cmd_pretrain(run, "derain");
  cmd_train(run, Regime::at);
  cmd_train(run, Regime::nat);
  cmd_train(run, Regime::pearl);
  cmd_train(run, Regime::pearl_ama);
  if (run.rc().eval.cross_model) cmd_pretrain(run, "alt-seg");
  cmd_eval(run);
  cmd_report({run.layout().root}, run.layout().root / "report", run.overwrite());
}

}  // namespace rainshield
