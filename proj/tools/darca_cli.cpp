// darca: domain adaptation experiments driven by reverse classification
// accuracy on synthetic two-domain phantom cohorts.
//
// Subcommands compose through the CSV and volume formats:
//   phantom gen -> baseline -> rca predict -> select -> adapt -> experiment
// Exit code is 0 on success; failures print one `error: ...` line to stderr.

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>

#include "darca/benchmark.hpp"
#include "darca/harness.hpp"

namespace fs = std::filesystem;
using namespace darca;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error(path.string() + ": cannot open for writing");
  out << text;
}

std::vector<ScoredSubject> read_estimates_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(path.string() + ": cannot open estimates");
  std::string line;
  if (!std::getline(in, line) || line.rfind("subject_id,predicted_dsc", 0) != 0)
    throw std::runtime_error(path.string() + ": not an estimates csv");
  std::vector<ScoredSubject> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto a = line.find(',');
    const auto b = line.find(',', a + 1);
    if (a == std::string::npos)
      throw std::runtime_error(path.string() + ": malformed estimates row");
    ScoredSubject s;
    s.id = line.substr(0, a);
    s.score = std::strtod(line.substr(a + 1, b - a - 1).c_str(), nullptr);
    out.push_back(std::move(s));
  }
  return out;
}

struct LoadedPair {
  SubjectRecord record;
  Volume image;
  LabelMap labels;
  bool has_labels = false;
};

std::vector<LoadedPair> load_pairs(const fs::path& manifest, bool need_labels) {
  const Cohort cohort = load_cohort(manifest);
  std::vector<LoadedPair> out;
  for (const auto& rec : cohort.subjects) {
    LoadedPair p;
    p.record = rec;
    p.image = read_volume(rec.image_path);
    if (rec.label_path) {
      p.labels = read_labels(*rec.label_path);
      p.has_labels = true;
    } else if (need_labels) {
      throw std::runtime_error("subject '" + rec.id + "' has no label file");
    }
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<Reference> to_references(const std::vector<LoadedPair>& pairs) {
  std::vector<Reference> refs;
  for (const auto& p : pairs) refs.push_back({p.record.id, p.image, p.labels});
  return refs;
}

GridGeometry reference_geometry_of(const std::vector<LoadedPair>& source) {
  std::size_t ref = 0;
  for (std::size_t i = 1; i < source.size(); ++i)
    if (source[i].record.id < source[ref].record.id) ref = i;
  return source[ref].image.geom;
}

int run(int argc, char** argv) {
  CLI::App app{"DARCA: RCA-guided subject selection for supervised domain adaptation"};
  app.require_subcommand(1);

  RegConfig reg;

  // ---- phantom gen ----
  auto* phantom_cmd = app.add_subcommand("phantom", "synthetic cohort tools");
  phantom_cmd->require_subcommand(1);
  auto* gen = phantom_cmd->add_subcommand("gen", "generate a phantom cohort");
  std::string gen_out, gen_domain = "source", gen_name;
  int gen_n = 10;
  std::uint64_t gen_seed = 1;
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--domain", gen_domain, "source or target preset")
      ->check(CLI::IsMember({"source", "target"}));
  gen->add_option("--n", gen_n, "number of subjects");
  gen->add_option("--seed", gen_seed, "cohort seed");
  gen->add_option("--name", gen_name, "subject id prefix (default: src/tgt)");

  // ---- baseline ----
  auto* baseline_cmd =
      app.add_subcommand("baseline", "train on source, predict and RCA-score target");
  std::string bl_source, bl_target, bl_out;
  int bl_label = 1, bl_folds = 3;
  std::uint64_t bl_seed = 1;
  baseline_cmd->add_option("--source", bl_source, "source manifest")->required();
  baseline_cmd->add_option("--target", bl_target, "target manifest")->required();
  baseline_cmd->add_option("--label", bl_label, "organ label");
  baseline_cmd->add_option("--folds", bl_folds, "cross-validation folds");
  baseline_cmd->add_option("--seed", bl_seed, "base seed");
  baseline_cmd->add_option("--out", bl_out, "output directory")->required();

  // ---- rca predict ----
  auto* rca_cmd = app.add_subcommand("rca", "reverse classification accuracy");
  rca_cmd->require_subcommand(1);
  auto* rca_predict = rca_cmd->add_subcommand("predict", "predict Dice without ground truth");
  std::string rp_model, rp_refs, rp_target, rp_out, rp_eval_out;
  int rp_label = 1;
  std::uint64_t rp_seed = 1;
  rca_predict->add_option("--model", rp_model, "segmenter model directory")->required();
  rca_predict->add_option("--refs", rp_refs, "labeled reference manifest")->required();
  rca_predict->add_option("--target", rp_target, "target manifest")->required();
  rca_predict->add_option("--label", rp_label, "organ label");
  rca_predict->add_option("--seed", rp_seed, "registration seed");
  rca_predict->add_option("--out", rp_out, "estimates csv path")->required();
  rca_predict->add_option("--eval-out", rp_eval_out,
                          "optional predicted-vs-real csv (needs target labels)");

  // ---- select ----
  auto* select_cmd = app.add_subcommand("select", "build an annotation selection plan");
  std::string se_estimates, se_strategy = "best_n", se_out;
  int se_n = 5;
  std::uint64_t se_seed = 1;
  select_cmd->add_option("--estimates", se_estimates, "estimates csv")->required();
  select_cmd->add_option("--strategy", se_strategy, "best_n|worst_n|best_worst|random_n|all")
      ->check(CLI::IsMember({"best_n", "worst_n", "best_worst", "random_n", "all"}));
  select_cmd->add_option("--n", se_n, "selection size (per side for best_worst)");
  select_cmd->add_option("--seed", se_seed, "seed for random_n");
  select_cmd->add_option("--out", se_out, "plan csv path")->required();

  // ---- adapt ----
  auto* adapt_cmd = app.add_subcommand("adapt", "adapt a model with selected subjects");
  std::string ad_mode = "finetune", ad_model, ad_source, ad_target, ad_plan, ad_out;
  double ad_blend = 0.5;
  std::uint64_t ad_seed = 1;
  adapt_cmd->add_option("--mode", ad_mode, "scratch|finetune|pseudo_finetune")
      ->check(CLI::IsMember({"scratch", "finetune", "pseudo_finetune"}));
  adapt_cmd->add_option("--model", ad_model, "pre-trained model (finetune modes)");
  adapt_cmd->add_option("--source", ad_source, "source manifest (scratch mode)");
  adapt_cmd->add_option("--target", ad_target, "target manifest")->required();
  adapt_cmd->add_option("--plan", ad_plan, "selection plan csv")->required();
  adapt_cmd->add_option("--blend", ad_blend, "fine-tune blend weight");
  adapt_cmd->add_option("--seed", ad_seed, "registration seed");
  adapt_cmd->add_option("--out", ad_out, "output model directory")->required();

  // ---- experiment ----
  auto* exp_cmd = app.add_subcommand("experiment", "cross-validated strategy experiment");
  std::string ex_source, ex_target, ex_strategy = "best_worst", ex_mode = "finetune",
              ex_selector = "rca", ex_out, ex_format = "csv";
  int ex_label = 1, ex_folds = 3, ex_n = 5;
  std::uint64_t ex_seed = 1;
  double ex_blend = 0.5;
  bool ex_sweep = false;
  std::vector<int> ex_sizes;
  exp_cmd->add_option("--source", ex_source, "source manifest")->required();
  exp_cmd->add_option("--target", ex_target, "target manifest")->required();
  exp_cmd->add_option("--label", ex_label, "organ label");
  exp_cmd->add_option("--folds", ex_folds, "cross-validation folds");
  exp_cmd->add_option("--strategy", ex_strategy, "best_n|worst_n|best_worst|random_n|all")
      ->check(CLI::IsMember({"best_n", "worst_n", "best_worst", "random_n", "all"}));
  exp_cmd->add_option("--n", ex_n, "selection size");
  exp_cmd->add_option("--mode", ex_mode, "scratch|finetune|pseudo_finetune|iterative")
      ->check(CLI::IsMember({"scratch", "finetune", "pseudo_finetune", "iterative"}));
  exp_cmd->add_option("--selector", ex_selector, "rca|real|random")
      ->check(CLI::IsMember({"rca", "real", "random"}));
  exp_cmd->add_option("--seed", ex_seed, "base seed");
  exp_cmd->add_option("--blend", ex_blend, "fine-tune blend weight");
  exp_cmd->add_flag("--sweep", ex_sweep, "run the set-size sweep instead of one cell");
  exp_cmd->add_option("--sizes", ex_sizes, "sweep set sizes (-1 = all)");
  exp_cmd->add_option("--out", ex_out, "report path")->required();
  exp_cmd->add_option("--format", ex_format, "csv or markdown")
      ->check(CLI::IsMember({"csv", "markdown"}));

  // ---- report ----
  auto* report_cmd = app.add_subcommand("report", "re-render a csv report");
  std::string rep_in, rep_out, rep_format = "markdown";
  report_cmd->add_option("--in", rep_in, "csv report path")->required();
  report_cmd->add_option("--format", rep_format, "csv or markdown")
      ->check(CLI::IsMember({"csv", "markdown"}));
  report_cmd->add_option("--out", rep_out, "output path (default stdout)");

  CLI11_PARSE(app, argc, argv);

  if (gen->parsed()) {
    const auto [source_params, target_params] = presets();
    CohortSpec spec;
    spec.params = gen_domain == "source" ? source_params : target_params;
    spec.domain = gen_domain == "source" ? Domain::source : Domain::target;
    spec.name = gen_name.empty() ? (gen_domain == "source" ? "src" : "tgt") : gen_name;
    spec.n_subjects = gen_n;
    spec.seed = gen_seed;
    spec.output_dir = gen_out;
    generate_cohort(spec);
    std::printf("wrote %d subjects to %s\n", gen_n, gen_out.c_str());
    return 0;
  }

  if (baseline_cmd->parsed()) {
    ExperimentConfig cfg;
    cfg.source_manifest = bl_source;
    cfg.target_manifest = bl_target;
    cfg.label = bl_label;
    cfg.folds = bl_folds;
    cfg.seed = bl_seed;
    cfg.reg = reg;
    cfg.reg.seed = bl_seed;
    const BaselineResult result = run_baseline(cfg);
    fs::create_directories(bl_out);
    save_model(result.model, fs::path(bl_out) / "model");
    std::vector<QualityEstimate> unique;
    std::set<std::string> seen;
    for (const auto& fold : result.fold_estimates)
      for (const auto& e : fold)
        if (seen.insert(e.subject_id).second) unique.push_back(e);
    write_text(fs::path(bl_out) / "estimates.csv", estimates_to_csv(unique));
    write_text(fs::path(bl_out) / "eval.csv", eval_report_to_csv(result.eval));
    std::printf("baseline test dice %.3f (%.3f) over %zu subjects; rca r=%.3f mae=%.3f\n",
                result.test_dsc.mean, result.test_dsc.stdv, result.test_dsc.count,
                result.eval.pearson_r, result.eval.mae);
    return 0;
  }

  if (rca_predict->parsed()) {
    const SegmenterModel model = load_model(rp_model);
    const auto refs_loaded = load_pairs(rp_refs, true);
    const auto targets = load_pairs(rp_target, false);
    RegConfig rc = reg;
    rc.seed = rp_seed;
    std::vector<std::pair<SubjectRecord, LabelMap>> outputs(targets.size());
    parallel_for(targets.size(), default_jobs(), [&](std::size_t i) {
      outputs[i] = {targets[i].record, predict(model, targets[i].image, rc).labels};
    });
    const auto refs = to_references(refs_loaded);
    const CohortPrediction pred = predict_cohort(outputs, refs, rp_label, rc, nullptr,
                                                 default_jobs());
    write_text(rp_out, estimates_to_csv(pred.estimates));
    for (const auto& f : pred.failures)
      std::fprintf(stderr, "warning: subject '%s' failed: %s\n", f.subject_id.c_str(),
                   f.message.c_str());
    if (!rp_eval_out.empty()) {
      std::vector<std::pair<std::string, LabelMap>> gt;
      for (const auto& t : targets)
        if (t.has_labels) gt.emplace_back(t.record.id, t.labels);
      const auto eval = evaluate_predictions(pred.estimates, gt, outputs, rp_label);
      write_text(rp_eval_out, eval_report_to_csv(eval));
    }
    std::printf("wrote %zu estimates to %s (%zu failures)\n", pred.estimates.size(),
                rp_out.c_str(), pred.failures.size());
    return 0;
  }

  if (select_cmd->parsed()) {
    const auto scores = read_estimates_csv(se_estimates);
    SelectionStrategy strategy;
    strategy.kind = parse_selection_kind(se_strategy);
    strategy.n = se_n;
    strategy.seed = se_seed;
    const SelectionPlan plan = select(strategy, rank_subjects(scores));
    write_text(se_out, plan_to_csv(plan));
    std::printf("selected %zu subjects -> %s\n", plan.chosen_ids.size(), se_out.c_str());
    return 0;
  }

  if (adapt_cmd->parsed()) {
    const auto plan_ids = plan_ids_from_csv(ad_plan);
    const auto targets = load_pairs(ad_target, ad_mode != "pseudo_finetune");
    RegConfig rc = reg;
    rc.seed = ad_seed;
    auto selected_manual = [&]() {
      std::vector<LabeledSubject> out;
      for (const auto& id : plan_ids)
        for (const auto& t : targets)
          if (t.record.id == id)
            out.push_back(LabeledSubject{t.record, t.image, t.labels, LabelKind::manual});
      if (out.size() != plan_ids.size())
        throw std::runtime_error("plan names subjects missing from the target manifest");
      return out;
    };
    SegmenterModel adapted;
    if (ad_mode == "scratch") {
      if (ad_source.empty()) throw std::runtime_error("scratch mode needs --source");
      const auto source = load_pairs(ad_source, true);
      std::vector<LabeledSubject> source_labeled;
      for (const auto& s : source)
        source_labeled.push_back(LabeledSubject{s.record, s.image, s.labels, LabelKind::manual});
      adapted = adapt_scratch(source_labeled, selected_manual(), reference_geometry_of(source),
                              rc, default_jobs());
    } else {
      if (ad_model.empty()) throw std::runtime_error(ad_mode + " mode needs --model");
      const SegmenterModel model = load_model(ad_model);
      if (ad_mode == "finetune") {
        adapted = adapt_finetune(model, selected_manual(), ad_blend, rc);
      } else {
        std::vector<std::pair<SubjectRecord, Volume>> images;
        for (const auto& id : plan_ids)
          for (const auto& t : targets)
            if (t.record.id == id) images.emplace_back(t.record, t.image);
        const PseudoLabelResult pl = pseudo_label(model, images, rc, default_jobs());
        for (const auto& f : pl.failures)
          std::fprintf(stderr, "warning: pseudo-labeling '%s' failed: %s\n",
                       f.subject_id.c_str(), f.message.c_str());
        adapted = adapt_finetune(model, pl.labeled, ad_blend, rc);
      }
    }
    save_model(adapted, ad_out);
    std::printf("wrote adapted model (%s) to %s\n", ad_mode.c_str(), ad_out.c_str());
    return 0;
  }

  if (exp_cmd->parsed()) {
    ExperimentConfig cfg;
    cfg.source_manifest = ex_source;
    cfg.target_manifest = ex_target;
    cfg.label = ex_label;
    cfg.folds = ex_folds;
    cfg.strategy.kind = parse_selection_kind(ex_strategy);
    cfg.strategy.n = ex_n;
    cfg.mode = parse_adapt_mode(ex_mode);
    cfg.selector = parse_selector(ex_selector);
    cfg.seed = ex_seed;
    cfg.reg = reg;
    cfg.reg.seed = ex_seed;
    cfg.blend = ex_blend;
    if (!ex_sizes.empty()) cfg.set_sizes = ex_sizes;
    ExperimentReport report;
    if (ex_sweep)
      report = run_setsize_sweep(cfg);
    else if (cfg.mode == AdaptMode::iterative)
      report = run_iterative(cfg);
    else
      report = run_strategy(cfg);
    const auto format = ex_format == "csv" ? ReportFormat::csv : ReportFormat::markdown;
    write_text(ex_out, emit_report(report, format));
    std::printf("wrote report (%zu rows) to %s\n", report.rows.size(), ex_out.c_str());
    return 0;
  }

  if (report_cmd->parsed()) {
    std::ifstream in(rep_in);
    if (!in) throw std::runtime_error(rep_in + ": cannot open report");
    std::string line;
    if (!std::getline(in, line) || line != "strategy,mode,n,mean_dsc,std_dsc,count")
      throw std::runtime_error(rep_in + ": not a darca csv report");
    ExperimentReport report;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      std::vector<std::string> cells;
      std::string cur;
      for (char c : line) {
        if (c == ',') {
          cells.push_back(cur);
          cur.clear();
        } else {
          cur.push_back(c);
        }
      }
      cells.push_back(cur);
      if (cells.size() != 6) throw std::runtime_error(rep_in + ": malformed report row");
      ReportRow row;
      row.strategy_label = cells[0];
      row.mode_label = cells[1];
      row.n = cells[2] == "all" ? -1 : std::atoi(cells[2].c_str());
      row.stat.mean = std::strtod(cells[3].c_str(), nullptr);
      row.stat.stdv = std::strtod(cells[4].c_str(), nullptr);
      row.stat.count = static_cast<std::size_t>(std::atoll(cells[5].c_str()));
      report.rows.push_back(std::move(row));
    }
    const auto format = rep_format == "csv" ? ReportFormat::csv : ReportFormat::markdown;
    const std::string text = emit_report(report, format);
    if (rep_out.empty())
      std::fputs(text.c_str(), stdout);
    else
      write_text(rep_out, text);
    return 0;
  }

  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
