#pragma once

// Gradient-boosted regression trees for squared error.
//
// Each tree is grown level-wise to max_depth by exact greedy search over
// presorted feature values; leaves hold the mean residual of their rows and
// the ensemble output is base_score + learning_rate * sum of leaf values.
// Categorical features are expanded one-vs-rest into 0/1 indicators before
// split search. Ties in split gain go to the lowest feature index, then the
// lowest threshold.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "gvim/dataset.hpp"
#include "gvim/error.hpp"
#include "gvim/rng.hpp"

namespace gvim {

struct GbtHyper {
  double learning_rate = 0.3;
  int max_depth = 6;
  int n_trees = 300;
  int min_samples_leaf = 5;

  void validate() const {
    if (!(learning_rate > 0.0 && learning_rate <= 1.0)) throw ConfigError("learning_rate must lie in (0, 1]");
    if (max_depth < 1 || max_depth > 30) throw ConfigError("max_depth must lie in [1, 30]");
    if (n_trees < 0) throw ConfigError("n_trees must be non-negative");
    if (min_samples_leaf < 1) throw ConfigError("min_samples_leaf must be at least 1");
  }

  bool operator==(const GbtHyper&) const = default;
};

// Hyperparameters by training-set size: the first row whose max_train_size
// is >= n_train applies; the last row covers everything larger.
struct GbtSchedule {
  struct Row {
    std::size_t max_train_size;
    GbtHyper hyper;
  };
  std::vector<Row> rows;

  static GbtSchedule standard() {
    return {{
        {999, {0.05, 4, 5000, 5}},
        {9999, {0.1, 5, 1000, 5}},
        {std::numeric_limits<std::size_t>::max(), {0.3, 6, 300, 5}},
    }};
  }

  GbtHyper for_size(std::size_t n_train) const {
    if (rows.empty()) throw ConfigError("empty GBT schedule");
    for (const auto& r : rows) {
      if (n_train <= r.max_train_size) return r.hyper;
    }
    return rows.back().hyper;
  }
};

// Input to the split search: a raw column (level == 0) or the indicator
// 1{column == level} of a categorical column.
struct SplitFeature {
  std::string feature;
  int level = 0;

  bool operator==(const SplitFeature&) const = default;
};

struct TreeNode {
  int feature = -1;  // index into GbtModel::split_features; -1 marks a leaf
  double threshold = 0.0;  // rows with value <= threshold go left
  int left = -1;
  int right = -1;
  double value = 0.0;  // leaf output (before shrinkage)

  bool is_leaf() const noexcept { return feature < 0; }
};

struct RegressionTree {
  std::vector<TreeNode> nodes;  // nodes[0] is the root

  // Leaf reached by a row given its split-feature values.
  int leaf_for(std::span<const double> row) const {
    int k = 0;
    while (!nodes[static_cast<std::size_t>(k)].is_leaf()) {
      const auto& n = nodes[static_cast<std::size_t>(k)];
      k = row[static_cast<std::size_t>(n.feature)] <= n.threshold ? n.left : n.right;
    }
    return k;
  }

  double predict_row(std::span<const double> row) const {
    return nodes[static_cast<std::size_t>(leaf_for(row))].value;
  }

  int depth() const {
    std::vector<int> d(nodes.size(), 0);
    int best = 0;
    for (std::size_t k = 0; k < nodes.size(); ++k) {
      if (nodes[k].is_leaf()) continue;
      d[static_cast<std::size_t>(nodes[k].left)] = d[k] + 1;
      d[static_cast<std::size_t>(nodes[k].right)] = d[k] + 1;
      best = std::max(best, d[k] + 1);
    }
    return best;
  }
};

struct GbtModel {
  std::vector<SplitFeature> split_features;
  std::vector<RegressionTree> trees;
  double base_score = 0.0;
  double learning_rate = 0.3;
  int max_depth = 6;

  // Row-major matrix of split-feature values for `rows`.
  std::vector<double> feature_matrix(const Dataset& data, std::span<const std::size_t> rows) const {
    const std::size_t f_count = split_features.size();
    std::vector<double> x(rows.size() * f_count);
    for (std::size_t f = 0; f < f_count; ++f) {
      const auto& sf = split_features[f];
      const auto j = data.find(sf.feature);
      if (!j) throw SchemaError("GBT model needs feature '" + sf.feature + "'");
      if (sf.level > 0 && (!data.feature(*j).is_categorical() || data.feature(*j).levels < sf.level)) {
        throw SchemaError("GBT model needs categorical feature '" + sf.feature + "' with level " + std::to_string(sf.level));
      }
      const auto col = data.column(*j);
      for (std::size_t i = 0; i < rows.size(); ++i) {
        const double v = col[rows[i]];
        x[i * f_count + f] = sf.level > 0 ? (v == sf.level ? 1.0 : 0.0) : v;
      }
    }
    return x;
  }

  std::vector<double> predict(const Dataset& data, std::span<const std::size_t> rows) const {
    const std::size_t f_count = split_features.size();
    const auto x = feature_matrix(data, rows);
    std::vector<double> out(rows.size(), 0.0);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const std::span<const double> row(x.data() + i * f_count, f_count);
      double s = 0.0;
      for (const auto& t : trees) s += t.predict_row(row);
      out[i] = base_score + learning_rate * s;
    }
    return out;
  }

  bool uses_feature(const std::string& name) const {
    for (const auto& t : trees) {
      for (const auto& n : t.nodes) {
        if (!n.is_leaf() && split_features[static_cast<std::size_t>(n.feature)].feature == name) return true;
      }
    }
    return false;
  }
};

namespace detail {

inline std::vector<SplitFeature> expand_split_features(const Dataset& data) {
  std::vector<SplitFeature> out;
  for (const auto& f : data.features()) {
    if (f.is_categorical()) {
      for (int level = 1; level <= f.levels; ++level) out.push_back({f.name, level});
    } else {
      out.push_back({f.name, 0});
    }
  }
  return out;
}

struct NodeStats {
  int tree_node = 0;
  double sum = 0.0;
  double sum_sq = 0.0;
  std::size_t count = 0;
};

struct BestSplit {
  double gain = 0.0;
  int feature = -1;
  double threshold = 0.0;
};

}  // namespace detail

inline GbtModel fit_gbt(const Dataset& data, std::span<const std::size_t> rows, const GbtHyper& hyper,
                        [[maybe_unused]] const RngStream& rng = {}) {
  hyper.validate();
  const std::size_t n = rows.size();
  if (n < 2) throw ConfigError("GBT needs at least 2 training rows");

  GbtModel model;
  model.learning_rate = hyper.learning_rate;
  model.max_depth = hyper.max_depth;
  model.split_features = detail::expand_split_features(data);
  const std::size_t f_count = model.split_features.size();

  // Column-major training values, plus each column's row order and sorted values.
  std::vector<std::vector<double>> x(f_count, std::vector<double>(n));
  std::vector<std::vector<std::uint32_t>> order(f_count);
  std::vector<std::vector<double>> sorted(f_count);
  {
    const auto matrix = model.feature_matrix(data, rows);
    for (std::size_t f = 0; f < f_count; ++f) {
      for (std::size_t i = 0; i < n; ++i) x[f][i] = matrix[i * f_count + f];
      order[f].resize(n);
      std::iota(order[f].begin(), order[f].end(), 0u);
      std::stable_sort(order[f].begin(), order[f].end(),
                       [&](std::uint32_t a, std::uint32_t b) { return x[f][a] < x[f][b]; });
      sorted[f].resize(n);
      for (std::size_t k = 0; k < n; ++k) sorted[f][k] = x[f][order[f][k]];
    }
  }

  const auto resp = data.response();
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = resp[rows[i]];
  model.base_score = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(n);

  std::vector<double> pred(n, model.base_score);
  std::vector<double> resid(n);
  std::vector<int> local(n);      // node within the current level, -1 once settled
  std::vector<int> tree_node(n);  // node within the tree
  const auto min_leaf = static_cast<std::size_t>(hyper.min_samples_leaf);

  std::vector<double> left_sum;
  std::vector<std::size_t> left_count;
  std::vector<double> last_value;

  model.trees.reserve(static_cast<std::size_t>(hyper.n_trees));
  for (int t = 0; t < hyper.n_trees; ++t) {
    RegressionTree tree;
    tree.nodes.emplace_back();
    detail::NodeStats root;
    for (std::size_t i = 0; i < n; ++i) {
      resid[i] = y[i] - pred[i];
      root.sum += resid[i];
      root.sum_sq += resid[i] * resid[i];
    }
    root.count = n;
    std::fill(local.begin(), local.end(), 0);
    std::fill(tree_node.begin(), tree_node.end(), 0);
    std::vector<detail::NodeStats> level = {root};
    std::vector<detail::NodeStats> settled;  // leaves, in creation order

    for (int depth = 0; depth < hyper.max_depth && !level.empty(); ++depth) {
      const std::size_t level_size = level.size();
      std::vector<char> active(level_size);
      bool any_active = false;
      for (std::size_t k = 0; k < level_size; ++k) {
        active[k] = level[k].count >= 2 * min_leaf;
        any_active = any_active || active[k];
      }
      std::vector<detail::BestSplit> best(level_size);
      if (any_active) {
        left_sum.assign(level_size, 0.0);
        left_count.assign(level_size, 0);
        last_value.assign(level_size, 0.0);
        for (std::size_t f = 0; f < f_count; ++f) {
          std::fill(left_sum.begin(), left_sum.end(), 0.0);
          std::fill(left_count.begin(), left_count.end(), 0);
          const auto& ord = order[f];
          const auto& vals = sorted[f];
          for (std::size_t k = 0; k < n; ++k) {
            const std::uint32_t i = ord[k];
            const int ln = local[i];
            if (ln < 0 || !active[static_cast<std::size_t>(ln)]) continue;
            const auto node = static_cast<std::size_t>(ln);
            const double v = vals[k];
            const std::size_t cnt = left_count[node];
            const auto& st = level[node];
            if (cnt >= min_leaf && cnt + min_leaf <= st.count && v > last_value[node]) {
              const double l = left_sum[node];
              const double r = st.sum - l;
              const auto nl = static_cast<double>(cnt);
              const auto nr = static_cast<double>(st.count - cnt);
              const double gain = l * l / nl + r * r / nr - st.sum * st.sum / static_cast<double>(st.count);
              if (gain > best[node].gain) {
                double thr = last_value[node] + 0.5 * (v - last_value[node]);
                if (!(thr < v)) thr = last_value[node];
                best[node] = {gain, static_cast<int>(f), thr};
              }
            }
            left_sum[node] += resid[i];
            left_count[node] = cnt + 1;
            last_value[node] = v;
          }
        }
      }

      // Reject splits whose gain is rounding noise relative to the node's spread.
      std::vector<int> left_local(level_size, -1);
      std::vector<detail::NodeStats> next;
      for (std::size_t k = 0; k < level_size; ++k) {
        auto& b = best[k];
        if (b.feature >= 0 && b.gain <= 1e-12 * std::max(1.0, level[k].sum_sq)) b.feature = -1;
        if (b.feature < 0) {
          settled.push_back(level[k]);
          continue;
        }
        auto& parent = tree.nodes[static_cast<std::size_t>(level[k].tree_node)];
        parent.feature = b.feature;
        parent.threshold = b.threshold;
        const int left_id = static_cast<int>(tree.nodes.size());
        tree.nodes.emplace_back();
        tree.nodes.emplace_back();
        tree.nodes[static_cast<std::size_t>(level[k].tree_node)].left = left_id;
        tree.nodes[static_cast<std::size_t>(level[k].tree_node)].right = left_id + 1;
        left_local[k] = static_cast<int>(next.size());
        next.push_back({left_id, 0.0, 0.0, 0});
        next.push_back({left_id + 1, 0.0, 0.0, 0});
      }
      for (std::size_t i = 0; i < n; ++i) {
        const int ln = local[i];
        if (ln < 0) continue;
        const int base = left_local[static_cast<std::size_t>(ln)];
        if (base < 0) {
          local[i] = -1;
          continue;
        }
        const auto& b = best[static_cast<std::size_t>(ln)];
        const int child = x[static_cast<std::size_t>(b.feature)][i] <= b.threshold ? base : base + 1;
        auto& st = next[static_cast<std::size_t>(child)];
        st.sum += resid[i];
        st.sum_sq += resid[i] * resid[i];
        ++st.count;
        local[i] = child;
        tree_node[i] = st.tree_node;
      }
      level = std::move(next);
    }
    for (const auto& st : level) settled.push_back(st);
    for (const auto& st : settled) {
      tree.nodes[static_cast<std::size_t>(st.tree_node)].value =
          st.count > 0 ? st.sum / static_cast<double>(st.count) : 0.0;
    }
    for (std::size_t i = 0; i < n; ++i) {
      pred[i] += hyper.learning_rate * tree.nodes[static_cast<std::size_t>(tree_node[i])].value;
    }
    model.trees.push_back(std::move(tree));
  }
  return model;
}

inline nlohmann::json to_json(const GbtModel& m) {
  nlohmann::json j;
  j["type"] = "gbt";
  j["base_score"] = m.base_score;
  j["learning_rate"] = m.learning_rate;
  j["max_depth"] = m.max_depth;
  j["split_features"] = nlohmann::json::array();
  for (const auto& f : m.split_features) j["split_features"].push_back({{"feature", f.feature}, {"level", f.level}});
  // Trees as parallel arrays: feature (-1 = leaf), threshold, left, right, value.
  j["trees"] = nlohmann::json::array();
  for (const auto& t : m.trees) {
    nlohmann::json tj;
    for (const auto& nd : t.nodes) {
      tj["feature"].push_back(nd.feature);
      tj["threshold"].push_back(nd.threshold);
      tj["left"].push_back(nd.left);
      tj["right"].push_back(nd.right);
      tj["value"].push_back(nd.value);
    }
    j["trees"].push_back(std::move(tj));
  }
  return j;
}

inline GbtModel gbt_model_from_json(const nlohmann::json& j) {
  GbtModel m;
  m.base_score = j.at("base_score");
  m.learning_rate = j.at("learning_rate");
  m.max_depth = j.at("max_depth");
  for (const auto& f : j.at("split_features")) m.split_features.push_back({f.at("feature"), f.at("level")});
  for (const auto& tj : j.at("trees")) {
    RegressionTree t;
    const auto& feat = tj.at("feature");
    for (std::size_t k = 0; k < feat.size(); ++k) {
      t.nodes.push_back({feat[k].get<int>(), tj.at("threshold")[k].get<double>(), tj.at("left")[k].get<int>(),
                         tj.at("right")[k].get<int>(), tj.at("value")[k].get<double>()});
    }
    m.trees.push_back(std::move(t));
  }
  return m;
}

}  // namespace gvim
