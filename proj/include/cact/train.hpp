#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <unordered_map>
#include <utility>
#include <vector>

#include "cact/context_net.hpp"
#include "cact/data.hpp"
#include "cact/errors.hpp"
#include "cact/losses.hpp"
#include "cact/optimizer.hpp"
#include "cact/rng.hpp"

namespace cact {

enum class StrategyKind { standard, weighted, auxiliary, attention };

inline std::string to_string(StrategyKind k) {
  switch (k) {
    case StrategyKind::standard: return "standard";
    case StrategyKind::weighted: return "weighted";
    case StrategyKind::auxiliary: return "auxiliary";
    case StrategyKind::attention: return "attention";
  }
  return "?";
}

inline StrategyKind strategy_kind_from(const std::string& s) {
  if (s == "standard") return StrategyKind::standard;
  if (s == "weighted") return StrategyKind::weighted;
  if (s == "auxiliary") return StrategyKind::auxiliary;
  if (s == "attention") return StrategyKind::attention;
  throw ConfigError("unknown training strategy: " + s, "strategy");
}

struct Strategy {
  StrategyKind kind = StrategyKind::standard;
  double alpha_joint = 0.5;
  double alpha_roi = 0.10;

  bool uses_attention() const { return kind == StrategyKind::attention; }
  bool uses_aux_head() const {
    return kind == StrategyKind::auxiliary || kind == StrategyKind::attention;
  }
};

// The strategy fixes which optional heads the model carries: standard and
// weighted train the plain classifier, auxiliary adds the segmentation head,
// attention adds the gate on top of the auxiliary setup.
inline ModelSpec apply_strategy(ModelSpec spec, const Strategy& s) {
  spec.context.attention = s.uses_attention();
  spec.context.aux_head = s.uses_aux_head();
  return spec;
}

// Snapshot of every store entry (parameters and buffers) by name, used for
// best-checkpoint tracking and for transferring pretrained weights.
using ParamSnapshot = std::vector<std::pair<std::string, std::vector<double>>>;

inline ParamSnapshot snapshot_params(const ParamStore& store) {
  ParamSnapshot snap;
  auto entries = store.all();
  snap.reserve(entries.size());
  for (auto& [name, t] : entries) snap.emplace_back(name, t.values());
  return snap;
}

// Restores entries present in the store; names the store does not know are
// skipped, which is how a pretraining head gets discarded on transfer.
inline std::size_t restore_params(ParamStore& store, const ParamSnapshot& snap) {
  std::size_t applied = 0;
  for (const auto& [name, values] : snap) {
    if (!store.has(name)) continue;
    Tensor t = store.find(name);
    if (t.size() != values.size())
      throw DimensionError("snapshot entry " + name + " has " + std::to_string(values.size()) +
                           " values, store expects " + std::to_string(t.size()));
    std::copy(values.begin(), values.end(), t.data().begin());
    ++applied;
  }
  return applied;
}

struct HistoryRow {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_accuracy = 0.0;
  std::string strategy;
  int fold = -1;
  std::uint64_t seed = 0;
};

inline std::string history_csv_header() {
  return "epoch,train_loss,val_accuracy,strategy,fold,seed";
}

inline void write_history_csv(const std::string& path, const std::vector<HistoryRow>& rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write history: " + path);
  out << history_csv_header() << "\n";
  char buf[64];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%.17g,%.17g", r.train_loss, r.val_accuracy);
    out << r.epoch << ',' << buf << ',' << r.strategy << ',' << r.fold << ',' << r.seed << "\n";
  }
}

inline std::vector<HistoryRow> read_history_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read history: " + path);
  std::string line;
  if (!std::getline(in, line) || line != history_csv_header())
    throw IoError("bad history header in " + path);
  std::vector<HistoryRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string field;
    HistoryRow r;
    try {
      std::getline(ss, field, ',');
      r.epoch = std::stoul(field);
      std::getline(ss, field, ',');
      r.train_loss = std::stod(field);
      std::getline(ss, field, ',');
      r.val_accuracy = std::stod(field);
      std::getline(ss, r.strategy, ',');
      std::getline(ss, field, ',');
      r.fold = std::stoi(field);
      if (!std::getline(ss, field, ',')) throw std::invalid_argument("missing seed");
      r.seed = std::stoull(field);
    } catch (const std::exception&) {
      throw IoError("bad history row in " + path + ": " + line);
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Patch-level pretraining of the extractor with a throwaway dense head.
// ---------------------------------------------------------------------------

class PatchClassifier {
 public:
  PatchClassifier(const ExtractorSpec& spec, Pooling pooling = Pooling::avg)
      : spec_(spec), pooling_(pooling) {
    extractor_ = Extractor(store_, "extractor", spec);
    head_ = DenseLayer(store_, "patch_head", spec.feature_depth, kClasses);
  }

  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }
  Extractor& extractor() { return extractor_; }
  const ExtractorSpec& spec() const { return spec_; }
  Pooling pooling() const { return pooling_; }

  void initialize(std::uint64_t seed) { store_.initialize(seed); }

  // Input [B, C, p, p], output class probabilities [B, kClasses].
  Tensor forward(const Tensor& patches, bool training) {
    Tensor maps = extractor_.forward(patches, training);
    Tensor pooled = pool(maps, pooling_ == Pooling::avg ? PoolKind::global_avg
                                                        : PoolKind::global_max);
    Tensor rows = reshape(pooled, {patches.extent(0), spec_.feature_depth});
    return softmax(head_(rows), 1);
  }

 private:
  ExtractorSpec spec_;
  Pooling pooling_ = Pooling::avg;
  ParamStore store_;
  Extractor extractor_;
  DenseLayer head_;
};

struct PretrainConfig {
  std::size_t epochs = 10;
  std::size_t batch = 16;
  RmsPropConfig optim{1e-3, 0.9, 1e-8};
  Pooling pooling = Pooling::avg;
  std::uint64_t seed = 7;
};

struct PretrainResult {
  ExtractorSpec spec;
  Pooling pooling = Pooling::avg;
  ParamSnapshot params;  // extractor weights, batch-norm buffers, and the head
  std::vector<double> epoch_loss;
  std::vector<double> epoch_val_accuracy;
  double best_val_accuracy = 0.0;
  std::size_t best_epoch = 0;
};

inline PatchClassifier rebuild_patch_classifier(const PretrainResult& r) {
  PatchClassifier clf(r.spec, r.pooling);
  restore_params(clf.params(), r.params);
  return clf;
}

namespace detail {

inline Tensor stack_patches(const std::unordered_map<std::size_t, Tensor>& images,
                            const std::vector<PatchRef>& refs, std::size_t lo, std::size_t hi,
                            std::size_t patch_size) {
  const std::size_t B = hi - lo;
  const std::size_t C = images.at(refs[lo].item).extent(0);
  const std::size_t per = C * patch_size * patch_size;
  std::vector<double> batch(B * per);
  for (std::size_t r = lo; r < hi; ++r) {
    const PatchRef& ref = refs[r];
    Tensor patch = crop_patch(images.at(ref.item), ref.i, ref.j, patch_size);
    const auto& v = patch.values();
    std::copy(v.begin(), v.end(), batch.begin() + (r - lo) * per);
  }
  return Tensor::from({B, C, patch_size, patch_size}, std::move(batch));
}

inline std::unordered_map<std::size_t, Tensor> load_images_for(
    const Dataset& data, const std::vector<PatchRef>& refs) {
  std::unordered_map<std::size_t, Tensor> images;
  for (const auto& ref : refs)
    if (!images.count(ref.item)) images.emplace(ref.item, data.load_image(ref.item));
  return images;
}

inline double patch_accuracy(PatchClassifier& clf,
                             const std::unordered_map<std::size_t, Tensor>& images,
                             const std::vector<PatchRef>& refs, std::size_t batch) {
  NoGrad guard;
  std::size_t correct = 0;
  for (std::size_t lo = 0; lo < refs.size(); lo += batch) {
    const std::size_t hi = std::min(refs.size(), lo + batch);
    Tensor probs =
        clf.forward(stack_patches(images, refs, lo, hi, clf.spec().patch_size), false);
    for (std::size_t r = lo; r < hi; ++r) {
      std::size_t best = 0;
      for (std::size_t c = 1; c < kClasses; ++c)
        if (probs.at({r - lo, c}) > probs.at({r - lo, best})) best = c;
      if (static_cast<int>(best) == refs[r].label) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(refs.size());
}

}  // namespace detail

// Trains the extractor on labelled patches through a temporary dense head.
// The head travels with the returned snapshot but is discarded when the
// weights are transferred into the full model, whose store does not name it.
inline PretrainResult pretrain_patch_classifier(const ExtractorSpec& spec, const Dataset& data,
                                                const PatchSet& train_patches,
                                                const PatchSet& val_patches,
                                                const PretrainConfig& cfg) {
  if (train_patches.refs.empty())
    throw StratificationError("patch pretraining: training patch set is empty");
  if (val_patches.refs.empty())
    throw StratificationError("patch pretraining: validation patch set is empty");
  if (spec.patch_size != data.patch_size())
    throw ContractError("extractor patch_size " + std::to_string(spec.patch_size) +
                        " does not match dataset patch_size " +
                        std::to_string(data.patch_size()));

  PatchClassifier clf(spec, cfg.pooling);
  clf.initialize(cfg.seed);
  RmsProp opt(clf.params(), cfg.optim);

  auto train_images = detail::load_images_for(data, train_patches.refs);
  auto val_images = detail::load_images_for(data, val_patches.refs);

  PretrainResult result;
  result.spec = spec;
  result.pooling = cfg.pooling;

  std::vector<PatchRef> order = train_patches.refs;
  for (std::size_t e = 1; e <= cfg.epochs; ++e) {
    Rng rng(stream_seed(cfg.seed, "pre_epoch:" + std::to_string(e)));
    rng.shuffle(order);
    double total = 0.0;
    for (std::size_t lo = 0; lo < order.size(); lo += cfg.batch) {
      const std::size_t hi = std::min(order.size(), lo + cfg.batch);
      Tensor batch = detail::stack_patches(train_images, order, lo, hi, spec.patch_size);
      std::vector<std::size_t> labels(hi - lo);
      for (std::size_t r = lo; r < hi; ++r)
        labels[r - lo] = static_cast<std::size_t>(order[r].label);
      Tensor probs = clf.forward(batch, true);
      Tensor loss = loss_cls(one_hot(labels, kClasses), probs);
      total += loss.item() * static_cast<double>(hi - lo);
      clf.params().zero_grads();
      loss.backward();
      opt.step();
    }
    result.epoch_loss.push_back(total / static_cast<double>(order.size()));
    result.epoch_val_accuracy.push_back(
        detail::patch_accuracy(clf, val_images, val_patches.refs, cfg.batch));
    // Best-checkpoint selection, strictly greater so the earliest tie wins.
    if (result.params.empty() || result.epoch_val_accuracy.back() > result.best_val_accuracy) {
      result.best_val_accuracy = result.epoch_val_accuracy.back();
      result.best_epoch = e;
      result.params = snapshot_params(clf.params());
    }
  }

  restore_params(clf.params(), result.params);
  return result;
}

// Copies pretrained extractor weights (and batch-norm buffers) into the full
// model by name; the pretraining head has no counterpart there and is dropped.
inline std::size_t load_pretrained_extractor(ContextModel& model, const PretrainResult& r) {
  if (r.spec.feature_depth != model.spec().extractor.feature_depth ||
      r.spec.patch_size != model.spec().extractor.patch_size ||
      r.spec.family != model.spec().extractor.family)
    throw ContractError("pretrained extractor spec does not match the model's extractor");
  return restore_params(model.params(), r.params);
}

// ---------------------------------------------------------------------------
// End-to-end training of the full model.
// ---------------------------------------------------------------------------

struct TrainConfig {
  Strategy strategy;
  std::size_t epochs = 10;
  RmsPropConfig optim;
  bool finetune_extractor = true;
  bool freeze_extractor_bn = false;
  std::uint64_t seed = 7;
  int fold = -1;
};

struct TrainResult {
  std::vector<HistoryRow> history;
  ParamSnapshot best_params;
  double best_val_accuracy = 0.0;
  std::size_t best_epoch = 0;
};

namespace detail {

inline std::size_t argmax_row(const Tensor& probs, std::size_t row) {
  std::size_t best = 0;
  for (std::size_t c = 1; c < probs.extent(1); ++c)
    if (probs.at({row, c}) > probs.at({row, best})) best = c;
  return best;
}

inline double image_accuracy(ContextModel& model, const Dataset& data,
                             const std::vector<std::size_t>& idx,
                             const std::unordered_map<std::size_t, Tensor>* cubes) {
  NoGrad guard;
  std::size_t correct = 0;
  for (std::size_t i : idx) {
    Tensor grid = cubes ? cubes->at(i) : model.encode_image(data.load_image(i), false).grid;
    Tensor probs = model.net().forward(grid, false).probs;
    if (static_cast<int>(argmax_row(probs, 0)) == data.item(i).label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(idx.size());
}

}  // namespace detail

// Trains the model on the given split. Deterministic for a fixed seed: the
// store is re-initialized from the seed (then overlaid with any pretrained
// extractor weights) and every shuffle draws from a seed-derived stream. The
// model is left holding the checkpoint of the best validation epoch; ties
// keep the earliest epoch.
inline TrainResult train(ContextModel& model, const Dataset& data,
                         const std::vector<std::size_t>& train_idx,
                         const std::vector<std::size_t>& val_idx, const TrainConfig& cfg,
                         const PretrainResult* pretrained = nullptr) {
  if (train_idx.empty()) throw ContractError("train: training split is empty");
  if (val_idx.empty()) throw ContractError("train: validation split is empty");
  {
    std::set<std::size_t> seen(train_idx.begin(), train_idx.end());
    for (std::size_t i : val_idx)
      if (seen.count(i))
        throw ContractError("train: image " + data.item(i).id +
                            " appears in both training and validation splits");
  }
  const Strategy& strat = cfg.strategy;
  if (model.spec().context.attention != strat.uses_attention() ||
      model.spec().context.aux_head != strat.uses_aux_head())
    throw ContractError("train: model heads do not match strategy " + to_string(strat.kind) +
                        " (apply_strategy builds a matching spec)");
  if (strat.alpha_joint < 0.0 || strat.alpha_joint > 1.0)
    throw ContractError("train: alpha_joint must lie in [0,1]");

  model.initialize(cfg.seed);
  if (pretrained) load_pretrained_extractor(model, *pretrained);
  RmsProp opt(model.params(), cfg.optim);

  // With a frozen extractor the cubes never change, so encode each image once
  // in eval mode and train only the context network on the cached grids.
  std::unordered_map<std::size_t, Tensor> cubes;
  const bool cache_cubes = !cfg.finetune_extractor;
  if (cache_cubes) {
    NoGrad guard;
    for (std::size_t i : train_idx)
      cubes.emplace(i, model.encode_image(data.load_image(i), false).grid);
    for (std::size_t i : val_idx)
      if (!cubes.count(i)) cubes.emplace(i, model.encode_image(data.load_image(i), false).grid);
  }
  const bool extractor_training = cfg.finetune_extractor && !cfg.freeze_extractor_bn;

  TrainResult result;
  result.best_params = snapshot_params(model.params());
  result.best_val_accuracy = -1.0;

  std::vector<std::size_t> order = train_idx;
  for (std::size_t e = 1; e <= cfg.epochs; ++e) {
    Rng rng(stream_seed(cfg.seed, "epoch:" + std::to_string(e)));
    rng.shuffle(order);
    double total = 0.0;
    for (std::size_t i : order) {
      const DatasetItem& item = data.item(i);
      Tensor grid = cache_cubes
                        ? cubes.at(i)
                        : model.encode_image(data.load_image(i), extractor_training).grid;
      ContextNet::Output out = model.net().forward(grid, true);
      Tensor target = one_hot({static_cast<std::size_t>(item.label)}, kClasses);
      Tensor loss;
      switch (strat.kind) {
        case StrategyKind::standard:
          loss = loss_cls(target, out.probs);
          break;
        case StrategyKind::weighted: {
          const double w = sample_weight(roi_ratio(item.mask), strat.alpha_roi);
          loss = loss_weighted(target, out.probs, {w});
          break;
        }
        case StrategyKind::auxiliary:
        case StrategyKind::attention:
          loss = loss_joint(target, out.probs, mask_to_onehot(item.mask), out.seg,
                            strat.alpha_joint);
          break;
      }
      total += loss.item();
      model.params().zero_grads();
      loss.backward();
      opt.step();
    }
    const double train_loss = total / static_cast<double>(order.size());
    const double val_acc = detail::image_accuracy(model, data, val_idx,
                                                  cache_cubes ? &cubes : nullptr);
    result.history.push_back(
        {e, train_loss, val_acc, to_string(strat.kind), cfg.fold, cfg.seed});
    if (val_acc > result.best_val_accuracy) {
      result.best_val_accuracy = val_acc;
      result.best_epoch = e;
      result.best_params = snapshot_params(model.params());
    }
  }

  restore_params(model.params(), result.best_params);
  return result;
}

// ---------------------------------------------------------------------------
// k-fold experiment driver.
// ---------------------------------------------------------------------------

struct FoldRow {
  std::string label;
  std::vector<double> fold_accuracy;
  double mean = 0.0;
  double stddev = 0.0;
};

struct FoldTable {
  std::size_t k = 0;
  std::vector<FoldRow> rows;

  std::vector<std::string> column_names() const {
    std::vector<std::string> names;
    for (std::size_t f = 1; f <= k; ++f) names.push_back("Fold-" + std::to_string(f));
    names.push_back("Mean");
    names.push_back("Std.");
    return names;
  }

  std::string to_csv() const {
    std::ostringstream out;
    out << "label";
    for (const auto& c : column_names()) out << ',' << c;
    out << "\n";
    char buf[32];
    for (const auto& r : rows) {
      out << r.label;
      auto put = [&](double v) {
        std::snprintf(buf, sizeof(buf), "%.6f", v);
        out << ',' << buf;
      };
      for (double v : r.fold_accuracy) put(v);
      put(r.mean);
      put(r.stddev);
      out << "\n";
    }
    return out.str();
  }
};

struct FoldsResult {
  FoldTable table;
  std::vector<HistoryRow> history;
};

// Runs every (model spec, strategy) configuration across class-stratified
// folds. Each fold trains an independent model on the other folds and reports
// held-out accuracy; folds may run in parallel since they share nothing.
inline FoldsResult run_folds(const Dataset& data, int k, const std::vector<Strategy>& strategies,
                             const std::vector<ModelSpec>& specs, const TrainConfig& base,
                             std::size_t workers = 1) {
  if (k < 2) throw ContractError("run_folds requires k >= 2");
  if (strategies.empty() || specs.empty())
    throw ContractError("run_folds requires at least one strategy and one model spec");
  std::vector<int> labels;
  labels.reserve(data.size());
  for (const auto& item : data.items()) labels.push_back(item.label);
  const std::vector<int> folds = partition_folds(labels, k);

  std::vector<std::vector<std::size_t>> fold_members(static_cast<std::size_t>(k));
  for (std::size_t i = 0; i < folds.size(); ++i)
    fold_members[static_cast<std::size_t>(folds[i])].push_back(i);

  FoldsResult result;
  result.table.k = static_cast<std::size_t>(k);

  for (const ModelSpec& spec : specs) {
    for (const Strategy& strat : strategies) {
      FoldRow row;
      row.label = to_string(spec.extractor.family);
      if (strategies.size() > 1) row.label += " (" + to_string(strat.kind) + ")";
      row.fold_accuracy.assign(static_cast<std::size_t>(k), 0.0);
      std::vector<std::vector<HistoryRow>> fold_history(static_cast<std::size_t>(k));

      std::atomic<std::size_t> next{0};
      auto run_fold = [&]() {
        for (;;) {
          const std::size_t f = next.fetch_add(1);
          if (f >= static_cast<std::size_t>(k)) return;
          std::vector<std::size_t> train_idx;
          for (std::size_t g = 0; g < static_cast<std::size_t>(k); ++g)
            if (g != f)
              train_idx.insert(train_idx.end(), fold_members[g].begin(), fold_members[g].end());
          TrainConfig cfg = base;
          cfg.strategy = strat;
          cfg.fold = static_cast<int>(f);
          ContextModel model(apply_strategy(spec, strat));
          TrainResult r = train(model, data, train_idx, fold_members[f], cfg);
          row.fold_accuracy[f] = r.best_val_accuracy;
          fold_history[f] = std::move(r.history);
        }
      };
      const std::size_t n_threads = std::max<std::size_t>(
          1, std::min(workers, static_cast<std::size_t>(k)));
      if (n_threads == 1) {
        run_fold();
      } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(run_fold);
        for (auto& t : pool) t.join();
      }

      double mean = 0.0;
      for (double v : row.fold_accuracy) mean += v;
      mean /= static_cast<double>(k);
      double var = 0.0;
      for (double v : row.fold_accuracy) var += (v - mean) * (v - mean);
      row.mean = mean;
      row.stddev = std::sqrt(var / static_cast<double>(k));
      result.table.rows.push_back(std::move(row));
      for (auto& h : fold_history)
        result.history.insert(result.history.end(), h.begin(), h.end());
    }
  }
  return result;
}

}  // namespace cact
