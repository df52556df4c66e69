#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "cact/checkpoint.hpp"
#include "cact/config.hpp"
#include "cact/evaluation.hpp"
#include "cact/log.hpp"

namespace fs = std::filesystem;
using namespace cact;

namespace {

std::string one_line(std::string msg) {
  for (auto& ch : msg)
    if (ch == '\n') ch = ';';
  return msg;
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::trunc);
  if (!out) throw IoError("cannot write " + p.string());
  out << text;
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw IoError("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// runs/<verb>-<timestamp>-seed<seed>[-<n>]/ with the effective config snapshot.
fs::path make_run_dir(const RunConfig& c, const std::string& verb) {
  std::time_t now = std::time(nullptr);
  char stamp[32];
  std::strftime(stamp, sizeof(stamp), "%Y%m%d-%H%M%S", std::localtime(&now));
  const std::string base = verb + "-" + stamp + "-seed" + std::to_string(c.seed);
  fs::path dir = fs::path(c.out_dir) / base;
  for (int n = 2; fs::exists(dir); ++n)
    dir = fs::path(c.out_dir) / (base + "-" + std::to_string(n));
  fs::create_directories(dir);
  write_text(dir / "config.json", run_config_to_json(c));
  log_info("run directory: " + dir.string());
  return dir;
}

std::vector<HistoryRow> pretrain_history(const PretrainResult& r, std::uint64_t seed) {
  std::vector<HistoryRow> rows;
  for (std::size_t e = 0; e < r.epoch_loss.size(); ++e)
    rows.push_back({e, r.epoch_loss[e], r.epoch_val_accuracy[e], "pretrain", -1, seed});
  return rows;
}

int cmd_generate(const RunConfig& c) {
  const fs::path run = make_run_dir(c, "generate");
  auto summary = generate(synthetic_spec_from(c), c.dataset_dir, c.count_per_class);
  std::ostringstream ss;
  ss << "dataset_dir: " << c.dataset_dir << "\nimages: " << summary.images
     << "\nmin_motif_overlap: " << summary.min_motif_overlap << "\n";
  write_text(run / "summary.txt", ss.str());
  log_info("generated " + std::to_string(summary.images) + " images into " + c.dataset_dir);
  return 0;
}

int cmd_dataset_validate(const RunConfig& c) {
  auto issues = Dataset::validate(c.dataset_dir, c.patch_size);
  if (!issues.empty()) {
    std::string joined;
    for (const auto& i : issues) joined += (joined.empty() ? "" : "; ") + i;
    std::fprintf(stderr, "error: dataset invalid: %s\n", one_line(joined).c_str());
    return 1;
  }
  const Dataset data = Dataset::ingest(c.dataset_dir, c.patch_size);
  auto hist = data.histogram();
  std::ostringstream ss;
  ss << "items: " << data.size() << " histogram:";
  for (auto h : hist) ss << ' ' << h;
  log_info(ss.str());
  std::printf("%s\n", ss.str().c_str());
  return 0;
}

// Extractor descriptor saved beside pretrained weights so a later train run
// can rebuild the patch classifier and lift the weights by name.
void save_pretrain(const fs::path& run, const PretrainResult& r, std::uint64_t seed) {
  nlohmann::json j;
  j["family"] = to_string(r.spec.family);
  j["feature_depth"] = r.spec.feature_depth;
  j["patch_size"] = r.spec.patch_size;
  j["in_channels"] = r.spec.in_channels;
  j["pooling"] = to_string(r.pooling);
  write_text(run / "extractor.json", j.dump(2) + "\n");
  PatchClassifier clf = rebuild_patch_classifier(r);
  save_checkpoint((run / "extractor.ckpt").string(), clf.params());
  write_history_csv((run / "history.csv").string(), pretrain_history(r, seed));
}

PretrainResult load_pretrain(const fs::path& dir) {
  if (!fs::exists(dir / "extractor.ckpt"))
    throw IoError("missing checkpoint: " + (dir / "extractor.ckpt").string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text(dir / "extractor.json"));
    PretrainResult r;
    r.spec.family = extractor_family_from(j.at("family"));
    r.spec.feature_depth = j.at("feature_depth");
    r.spec.patch_size = j.at("patch_size");
    r.spec.in_channels = j.at("in_channels");
    r.pooling = pooling_from(j.at("pooling"));
    PatchClassifier clf(r.spec, r.pooling);
    load_checkpoint((dir / "extractor.ckpt").string(), clf.params());
    r.params = snapshot_params(clf.params());
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("bad extractor descriptor: ") + e.what());
  }
}

int cmd_pretrain(const RunConfig& c) {
  const fs::path run = make_run_dir(c, "pretrain");
  const Dataset data = Dataset::ingest(c.dataset_dir, c.patch_size);
  ModelSpec spec = config_model_spec(c);
  const PretrainConfig pc = config_pretrain(c);
  const PatchSet train_patches =
      derive_patch_dataset(data, data.train_indices(), c.patch_cap, c.seed);
  const PatchSet val_patches =
      derive_patch_dataset(data, data.val_indices(), c.patch_cap, c.seed + 1);
  auto result = pretrain_patch_classifier(spec.extractor, data, train_patches, val_patches, pc);
  save_pretrain(run, result, c.seed);
  char line[128];
  std::snprintf(line, sizeof(line), "final val accuracy %.4f after %zu epochs",
                result.epoch_val_accuracy.back(), result.epoch_val_accuracy.size());
  log_info(line);
  std::printf("%s\n", line);
  return 0;
}

int cmd_train(const RunConfig& c, const std::string& pretrained_dir) {
  const fs::path run = make_run_dir(c, "train");
  const Dataset data = Dataset::ingest(c.dataset_dir, c.patch_size);
  const ModelSpec spec = config_model_spec(c);
  TrainConfig tc = config_train(c);

  PretrainResult pre;
  const PretrainResult* pre_ptr = nullptr;
  if (!pretrained_dir.empty()) {
    pre = load_pretrain(pretrained_dir);
    pre_ptr = &pre;
  }

  if (c.folds >= 2) {
    auto result = run_folds(data, c.folds, {config_strategy(c)}, {spec}, tc,
                            std::max<std::size_t>(1, c.workers));
    write_text(run / "fold_table.csv", result.table.to_csv());
    write_history_csv((run / "history.csv").string(), result.history);
    std::printf("%s", result.table.to_csv().c_str());
    return 0;
  }

  ContextModel model(spec);
  auto result = train(model, data, data.train_indices(), data.val_indices(), tc, pre_ptr);
  write_text(run / "model.json", model_spec_to_json(spec) + "\n");
  save_checkpoint((run / "model.ckpt").string(), model.params());
  write_history_csv((run / "history.csv").string(), result.history);
  char line[128];
  std::snprintf(line, sizeof(line), "best val accuracy %.4f at epoch %zu",
                result.best_val_accuracy, result.best_epoch);
  log_info(line);
  std::printf("%s\ncheckpoint: %s\n", line, (run / "model.ckpt").string().c_str());
  return 0;
}

int cmd_infer(const RunConfig& c, const std::string& checkpoint) {
  fs::path ckpt = checkpoint;
  if (fs::is_directory(ckpt)) ckpt /= "model.ckpt";
  if (checkpoint.empty() || !fs::exists(ckpt)) {
    std::fprintf(stderr, "error: missing checkpoint: %s\n", checkpoint.c_str());
    return 3;
  }
  const fs::path run = make_run_dir(c, "infer");
  const ModelSpec spec = model_spec_from_json(read_text(ckpt.parent_path() / "model.json"));
  ContextModel model(spec);
  load_checkpoint(ckpt.string(), model.params());

  const Dataset data = Dataset::ingest(c.dataset_dir, c.patch_size);
  std::ostringstream pred;
  pred << "id,label,outcome,grade,tie,windows,votes_background,votes_normal,votes_low,"
          "votes_high\n";
  std::size_t graded = 0, correct = 0;
  for (std::size_t i : data.test_indices()) {
    const auto& item = data.item(i);
    const GradeReport r =
        grade_image(model, data.load_image(i), c.window_cells, c.stride_cells);
    pred << item.id << ',' << item.label << ','
         << (r.vote.outcome == GradeOutcome::graded ? "graded" : "no_glandular_region") << ','
         << r.vote.grade << ',' << (r.vote.tie ? 1 : 0) << ',' << r.plan.offsets.size();
    for (auto t : r.vote.tally) pred << ',' << t;
    pred << "\n";
    write_window_csv((run / ("windows_" + item.id + ".csv")).string(), r);
    if (r.vote.outcome == GradeOutcome::graded) {
      ++graded;
      if (r.vote.grade == item.label) ++correct;
    }
  }
  write_text(run / "predictions.csv", pred.str());
  char line[128];
  std::snprintf(line, sizeof(line), "graded %zu images, accuracy %.4f", graded,
                graded ? static_cast<double>(correct) / static_cast<double>(graded) : 0.0);
  log_info(line);
  std::printf("%s\npredictions: %s\n", line, (run / "predictions.csv").string().c_str());
  return 0;
}

// Column order follows the strategy comparison layout; any further strategy
// labels (e.g. pretrain curves) are appended in first-seen order.
std::vector<std::string> strategy_columns(const std::vector<HistoryRow>& rows) {
  const std::vector<std::string> canonical{"standard", "weighted", "auxiliary", "attention"};
  std::vector<std::string> cols;
  for (const auto& name : canonical)
    if (std::any_of(rows.begin(), rows.end(),
                    [&](const HistoryRow& r) { return r.strategy == name; }))
      cols.push_back(name);
  for (const auto& r : rows)
    if (std::find(cols.begin(), cols.end(), r.strategy) == cols.end())
      cols.push_back(r.strategy);
  return cols;
}

int cmd_report(const RunConfig& c, const std::vector<std::string>& history_files,
               const std::vector<std::string>& prediction_files) {
  if (history_files.empty())
    throw ContractError("report needs at least one --history file");
  const fs::path run = make_run_dir(c, "report");

  std::vector<HistoryRow> rows;
  for (const auto& f : history_files)
    for (auto& r : read_history_csv(f)) rows.push_back(std::move(r));
  if (rows.empty()) throw ContractError("history files contain no rows");

  const std::vector<std::string> cols = strategy_columns(rows);
  std::vector<int> folds;
  for (const auto& r : rows)
    if (std::find(folds.begin(), folds.end(), r.fold) == folds.end()) folds.push_back(r.fold);
  std::sort(folds.begin(), folds.end());

  // Cell value: best validation accuracy (percent) of that strategy on that
  // fold. Rows missing any strategy are dropped so every cell is comparable.
  std::vector<std::string> row_labels;
  std::vector<std::vector<double>> values;
  for (int fold : folds) {
    std::vector<double> row;
    for (const auto& col : cols) {
      double best = -1.0;
      for (const auto& r : rows)
        if (r.fold == fold && r.strategy == col) best = std::max(best, r.val_accuracy);
      if (best >= 0.0) row.push_back(100.0 * best);
    }
    if (row.size() == cols.size()) {
      row_labels.push_back(fold < 0 ? "run" : "Fold-" + std::to_string(fold + 1));
      values.push_back(std::move(row));
    }
  }
  if (values.empty())
    throw ContractError("report: no fold has history for every strategy column");
  if (values.size() > 1) {
    std::vector<double> mean(cols.size(), 0.0);
    for (const auto& row : values)
      for (std::size_t j = 0; j < row.size(); ++j) mean[j] += row[j];
    for (auto& v : mean) v /= static_cast<double>(values.size());
    row_labels.push_back("Mean");
    values.push_back(std::move(mean));
  }

  const RankTable table = rank_cells(values, row_labels, cols);
  auto bundle = render_report(table, rows, {}, run);

  if (!prediction_files.empty()) {
    std::ofstream out(bundle.report_txt, std::ios::app);
    out << "\nPredictions\n";
    for (const auto& f : prediction_files) {
      std::istringstream in(read_text(f));
      std::string line;
      if (!std::getline(in, line)) throw IoError("empty prediction csv: " + f);
      auto split = [](const std::string& s) {
        std::vector<std::string> fields;
        std::stringstream ss(s);
        std::string field;
        while (std::getline(ss, field, ',')) fields.push_back(field);
        return fields;
      };
      const auto header = split(line);
      const auto label_col = std::find(header.begin(), header.end(), "label");
      const auto grade_col = std::find(header.begin(), header.end(), "grade");
      if (label_col == header.end() || grade_col == header.end())
        throw IoError("prediction csv lacks label/grade columns: " + f);
      const std::size_t li = static_cast<std::size_t>(label_col - header.begin());
      const std::size_t gi = static_cast<std::size_t>(grade_col - header.begin());
      std::vector<int> preds, truths;
      while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto fields = split(line);
        if (fields.size() <= std::max(li, gi))
          throw IoError("short prediction row in " + f);
        preds.push_back(std::stoi(fields[gi]));
        truths.push_back(std::stoi(fields[li]));
      }
      char buf[160];
      std::snprintf(buf, sizeof(buf), "%s: accuracy %.4f over %zu images", f.c_str(),
                    accuracy(preds, truths), preds.size());
      out << buf << "\n";
    }
  }
  std::printf("report: %s\n", bundle.report_txt.string().c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"context-aware grading pipeline over coarse patch grids"};
  app.require_subcommand(1);

  std::string config_path, pretrained_dir, checkpoint;
  std::vector<std::string> history_files, prediction_files;
  std::uint64_t seed = 0;
  std::string out_dir;
  std::size_t workers = 0;

  auto* opt_config = app.add_option("--config", config_path, "JSON config file");
  auto* opt_seed = app.add_option("--seed", seed, "override the config seed");
  auto* opt_out = app.add_option("--out", out_dir, "override the output directory");
  auto* opt_workers = app.add_option("--workers", workers, "fold parallelism for train");

  auto* sub_generate = app.add_subcommand("generate", "write a synthetic dataset");
  auto* sub_validate = app.add_subcommand("dataset-validate", "run dataset checks");
  auto* sub_pretrain = app.add_subcommand("pretrain", "train the patch extractor");
  auto* sub_train = app.add_subcommand("train", "train the context model");
  auto* sub_infer = app.add_subcommand("infer", "grade the test split");
  auto* sub_report = app.add_subcommand("report", "render a comparison report");
  for (auto* s : {sub_generate, sub_validate, sub_pretrain, sub_train, sub_infer, sub_report})
    s->fallthrough();

  sub_train->add_option("--pretrained", pretrained_dir, "pretrain run directory");
  sub_infer->add_option("--checkpoint", checkpoint, "train run directory or .ckpt file");
  sub_report->add_option("--history", history_files, "training history CSVs");
  sub_report->add_option("--predictions", prediction_files, "prediction CSVs");

  CLI11_PARSE(app, argc, argv);

  try {
    RunConfig cfg;
    if (opt_config->count()) cfg = load_run_config(config_path);
    if (opt_seed->count()) cfg.seed = seed;
    if (opt_out->count()) cfg.out_dir = out_dir;
    if (opt_workers->count()) cfg.workers = workers;

    if (sub_generate->parsed()) return cmd_generate(cfg);
    if (sub_validate->parsed()) return cmd_dataset_validate(cfg);
    if (sub_pretrain->parsed()) return cmd_pretrain(cfg);
    if (sub_train->parsed()) return cmd_train(cfg, pretrained_dir);
    if (sub_infer->parsed()) return cmd_infer(cfg, checkpoint);
    if (sub_report->parsed()) return cmd_report(cfg, history_files, prediction_files);
    return 1;
  } catch (const ConfigError& e) {
    std::string msg = "error: config: " + one_line(e.what());
    if (!e.key.empty()) msg += " (key: " + e.key + ")";
    std::fprintf(stderr, "%s\n", msg.c_str());
    return 2;
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", one_line(e.what()).c_str());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", one_line(e.what()).c_str());
    return 1;
  }
}
