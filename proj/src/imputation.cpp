#include "cablevae/imputation.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>
#include <ostream>
#include <set>

#include "cablevae/error.hpp"
#include "cablevae/rng.hpp"

namespace cablevae {

void GibbsConfig::validate() const {
  if (iterations <= burn_in) throw ConfigError("gibbs.iterations must exceed gibbs.burn_in");
  if (batch_rows < 1) throw ConfigError("gibbs.batch_rows must be >= 1");
}

nlohmann::json gibbs_config_to_json(const GibbsConfig& c) {
  return {{"iterations", c.iterations},
          {"burn_in", c.burn_in},
          {"aggregation", c.aggregation == Aggregation::kMean ? "mean" : "last"},
          {"seed", c.seed}};
}

GibbsConfig gibbs_config_from_json(const nlohmann::json& doc) {
  if (!doc.is_object()) throw ConfigError("gibbs: expected an object");
  static const std::set<std::string> allowed{"iterations", "burn_in", "aggregation", "seed", "batch_rows"};
  for (const auto& [key, value] : doc.items()) {
    if (!allowed.count(key)) throw ConfigError("gibbs." + key + ": unknown field");
  }
  GibbsConfig c;
  try {
    c.iterations = doc.value("iterations", c.iterations);
    c.burn_in = doc.value("burn_in", c.burn_in);
    c.seed = doc.value("seed", c.seed);
    c.batch_rows = doc.value("batch_rows", c.batch_rows);
    const auto agg = doc.value("aggregation", std::string("mean"));
    if (agg == "mean") c.aggregation = Aggregation::kMean;
    else if (agg == "last") c.aggregation = Aggregation::kLast;
    else throw ConfigError("gibbs.aggregation: expected mean or last, got '" + agg + "'");
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("gibbs: ") + e.what());
  }
  c.validate();
  return c;
}

std::size_t ImputationResult::imputed_count() const {
  return static_cast<std::size_t>(std::count(imputed.begin(), imputed.end(), std::uint8_t{1}));
}

void write_provenance_csv(std::ostream& out, const ImputationResult& result) {
  const auto& schema = result.completed.schema();
  for (std::size_t c = 0; c < schema.size(); ++c) out << (c ? "," : "") << schema[c].name;
  out << "\n";
  for (std::size_t r = 0; r < result.completed.rows(); ++r) {
    for (std::size_t c = 0; c < schema.size(); ++c) {
      out << (c ? "," : "") << (result.was_imputed(r, c) ? '1' : '0');
    }
    out << "\n";
  }
}

namespace {

ImputationResult start_result(const TabularDataset& dataset, std::string name, nlohmann::json config) {
  ImputationResult res{dataset, std::vector<std::uint8_t>(dataset.rows() * dataset.cols(), 0),
                       std::move(name), std::move(config)};
  return res;
}

void fill(ImputationResult& res, std::size_t r, std::size_t c, double value) {
  res.completed.set(r, c, value);
  res.imputed[r * res.completed.cols() + c] = 1;
}

std::vector<std::size_t> incomplete_rows(const TabularDataset& ds) {
  std::vector<std::size_t> rows;
  for (std::size_t r = 0; r < ds.rows(); ++r) {
    if (!ds.row_complete(r)) rows.push_back(r);
  }
  return rows;
}

std::size_t vote(const std::vector<std::size_t>& counts) {
  // max_element returns the first maximum, i.e. the lower index on ties.
  return static_cast<std::size_t>(std::max_element(counts.begin(), counts.end()) - counts.begin());
}

std::vector<double> softmax(const double* row, std::size_t n) {
  const double mx = *std::max_element(row, row + n);
  std::vector<double> p(n);
  double s = 0.0;
  for (std::size_t j = 0; j < n; ++j) s += (p[j] = std::exp(row[j] - mx));
  for (double& v : p) v /= s;
  return p;
}

}  // namespace

// ---------------------------------------------------------------------------
// Pseudo-Gibbs

ImputationResult pseudo_gibbs_impute(const VaeModel& model, const TabularDataset& dataset,
                                     const GibbsConfig& config) {
  config.validate();
  if (!model.trained()) throw ConfigError("pseudo-Gibbs imputation needs a trained model");
  if (!(dataset.schema() == model.schema())) throw DataError("dataset schema does not match the model");

  const auto& schema = model.schema();
  const auto& layout = model.layout();
  const auto& pre = model.preprocessor();
  const std::size_t latent = model.config().latent_dim;
  ImputationResult res = start_result(dataset, "vae", gibbs_config_to_json(config));

  const std::vector<std::size_t> rows = incomplete_rows(dataset);
  for (std::size_t r : rows) {
    bool any = false;
    for (std::size_t c = 0; c < schema.size(); ++c) any = any || dataset.observed(r, c);
    if (!any) throw DataError("row " + std::to_string(r) + " has no observed cells");
    for (std::size_t c : layout.conditions) {
      if (!dataset.observed(r, c)) {
        throw DataError("row " + std::to_string(r) + " condition column '" + schema[c].name + "' is missing");
      }
    }
  }
  if (rows.empty()) return res;

  // Working copy in standardized space restricted to incomplete rows, with
  // placeholder initial guesses in the missing cells.
  TabularDataset work = transform(dataset.select_rows(rows), pre);
  std::vector<std::uint8_t> missing(work.rows() * work.cols(), 0);
  for (std::size_t i = 0; i < work.rows(); ++i) {
    for (std::size_t c = 0; c < schema.size(); ++c) {
      if (work.observed(i, c)) continue;
      missing[i * work.cols() + c] = 1;
      work.set(i, c, schema[c].is_categorical() ? static_cast<double>(pre.stats(c).modal_index) : 0.0);
    }
  }
  auto is_missing = [&](std::size_t i, std::size_t c) { return missing[i * work.cols() + c] != 0; };

  std::vector<Rng> rngs;
  rngs.reserve(rows.size());
  for (std::size_t r : rows) rngs.emplace_back(derive_seed(config.seed, static_cast<std::uint64_t>(r)));

  std::vector<double> sums(work.rows() * work.cols(), 0.0);
  std::vector<std::vector<std::size_t>> votes(work.rows() * work.cols());
  for (std::size_t i = 0; i < work.rows(); ++i) {
    for (std::size_t c : layout.categorical) {
      if (is_missing(i, c)) votes[i * work.cols() + c].assign(schema[c].category_count(), 0);
    }
  }

  for (std::size_t it = 0; it < config.iterations; ++it) {
    const bool keep = it >= config.burn_in;
    for (std::size_t begin = 0; begin < work.rows(); begin += config.batch_rows) {
      const std::size_t end = std::min(work.rows(), begin + config.batch_rows);
      std::vector<std::size_t> batch(end - begin);
      std::iota(batch.begin(), batch.end(), begin);

      Encoded enc = encode(model, work, batch);
      Tensor noise({batch.size(), latent});
      for (std::size_t b = 0; b < batch.size(); ++b) {
        for (std::size_t l = 0; l < latent; ++l) noise.at(b, l) = rngs[batch[b]].normal();
      }
      const Tensor z = reparameterize(enc.mu, enc.logvar, noise);
      ConditionValues cond;
      for (std::size_t c : layout.conditions) {
        auto& v = cond[schema[c].name];
        for (std::size_t i : batch) v.push_back(work.category(i, c));
      }
      const Reconstruction rec = decode(model, z, cond);
      std::optional<Tensor> target;
      if (layout.target) target = predict_target(model, enc.mu);

      for (std::size_t b = 0; b < batch.size(); ++b) {
        const std::size_t i = batch[b];
        for (std::size_t j = 0; j < layout.continuous.size(); ++j) {
          const std::size_t c = layout.continuous[j];
          if (is_missing(i, c)) work.set(i, c, rec.continuous_means.at(b, j));
        }
        for (std::size_t k = 0; k < layout.categorical.size(); ++k) {
          const std::size_t c = layout.categorical[k];
          if (!is_missing(i, c)) continue;
          const auto& logits = rec.logits[k];
          const auto p = softmax(logits.data() + b * logits.cols(), logits.cols());
          work.set(i, c, static_cast<double>(rngs[i].categorical(p)));
        }
        if (layout.target && is_missing(i, *layout.target)) work.set(i, *layout.target, (*target)[b]);

        if (!keep) continue;
        for (std::size_t c = 0; c < schema.size(); ++c) {
          if (!is_missing(i, c)) continue;
          if (schema[c].is_categorical()) ++votes[i * work.cols() + c][work.category(i, c)];
          else sums[i * work.cols() + c] += work.value(i, c);
        }
      }
    }
  }

  const double kept = static_cast<double>(config.iterations - config.burn_in);
  for (std::size_t i = 0; i < work.rows(); ++i) {
    for (std::size_t c = 0; c < schema.size(); ++c) {
      if (!is_missing(i, c)) continue;
      double value;
      if (config.aggregation == Aggregation::kLast) {
        value = work.value(i, c);
      } else if (schema[c].is_categorical()) {
        value = static_cast<double>(vote(votes[i * work.cols() + c]));
      } else {
        value = sums[i * work.cols() + c] / kept;
      }
      if (!schema[c].is_categorical()) value = pre.inverse(c, value);
      if (!std::isfinite(value)) {
        throw DivergenceError("pseudo-Gibbs produced a non-finite value in row " + std::to_string(rows[i]));
      }
      fill(res, rows[i], c, value);
    }
  }
  return res;
}

// ---------------------------------------------------------------------------
// Baselines

BaselineMethod parse_baseline_method(const std::string& name) {
  if (name == "random") return BaselineMethod::kRandom;
  if (name == "mode") return BaselineMethod::kMode;
  if (name == "median") return BaselineMethod::kMedian;
  if (name == "mean") return BaselineMethod::kMean;
  throw ConfigError("unknown baseline imputer '" + name + "'");
}

std::string baseline_method_name(BaselineMethod method) {
  switch (method) {
    case BaselineMethod::kRandom: return "random";
    case BaselineMethod::kMode: return "mode";
    case BaselineMethod::kMedian: return "median";
    case BaselineMethod::kMean: return "mean";
  }
  return "?";
}

ImputationResult baseline_impute(const TabularDataset& dataset, BaselineMethod method, std::uint64_t seed,
                                 const TabularDataset& reference) {
  if (!(dataset.schema() == reference.schema())) throw DataError("reference schema does not match the dataset");
  const auto& schema = dataset.schema();
  ImputationResult res = start_result(dataset, baseline_method_name(method),
                                      {{"method", baseline_method_name(method)}, {"seed", seed}});
  Rng rng(derive_seed(seed, "baseline"));

  for (std::size_t c = 0; c < schema.size(); ++c) {
    if (dataset.observed_count(c) == dataset.rows()) continue;
    std::vector<double> values;
    for (std::size_t r = 0; r < reference.rows(); ++r) {
      if (reference.observed(r, c)) values.push_back(reference.value(r, c));
    }
    if (values.empty()) throw DataError("column '" + schema[c].name + "' has no observed values to impute from");

    double stat = 0.0;
    const bool use_mode = method == BaselineMethod::kMode || schema[c].is_categorical();
    if (method == BaselineMethod::kRandom) {
      // drawn per cell below
    } else if (use_mode) {
      // Most frequent value; ties go to the smaller value.
      std::vector<double> sorted = values;
      std::sort(sorted.begin(), sorted.end());
      std::size_t best = 0;
      for (std::size_t i = 0; i < sorted.size();) {
        std::size_t j = i;
        while (j < sorted.size() && sorted[j] == sorted[i]) ++j;
        if (j - i > best) {
          best = j - i;
          stat = sorted[i];
        }
        i = j;
      }
    } else if (method == BaselineMethod::kMedian) {
      std::vector<double> sorted = values;
      std::sort(sorted.begin(), sorted.end());
      const std::size_t n = sorted.size();
      stat = n % 2 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
    } else {
      stat = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
    }

    for (std::size_t r = 0; r < dataset.rows(); ++r) {
      if (dataset.observed(r, c)) continue;
      fill(res, r, c, method == BaselineMethod::kRandom ? values[rng.index(values.size())] : stat);
    }
  }
  return res;
}

ImputationResult baseline_impute(const TabularDataset& dataset, BaselineMethod method, std::uint64_t seed) {
  return baseline_impute(dataset, method, seed, dataset);
}

// ---------------------------------------------------------------------------
// KNN

ImputationResult knn_impute(const TabularDataset& dataset, std::size_t k) {
  if (k < 1) throw ConfigError("knn: k must be >= 1");
  const auto& schema = dataset.schema();
  ImputationResult res = start_result(dataset, "knn", {{"k", k}, {"distance", "gower"}});
  const auto targets = incomplete_rows(dataset);
  if (targets.empty()) return res;

  std::vector<std::size_t> reference;
  for (std::size_t r = 0; r < dataset.rows(); ++r) {
    if (dataset.row_complete(r)) reference.push_back(r);
  }
  if (reference.size() < k) {
    throw DataError("knn: " + std::to_string(reference.size()) + " complete reference rows, need at least " +
                    std::to_string(k));
  }

  const TabularDataset std_data = transform(dataset, fit_preprocessor(dataset));
  std::vector<double> range(schema.size(), 0.0);
  for (std::size_t c = 0; c < schema.size(); ++c) {
    if (schema[c].is_categorical()) continue;
    double lo = std_data.value(reference[0], c);
    double hi = lo;
    for (std::size_t r : reference) {
      lo = std::min(lo, std_data.value(r, c));
      hi = std::max(hi, std_data.value(r, c));
    }
    range[c] = hi - lo;
  }

  std::vector<std::pair<double, std::size_t>> dist(reference.size());
  for (std::size_t r : targets) {
    std::vector<std::size_t> cols;
    for (std::size_t c = 0; c < schema.size(); ++c) {
      if (dataset.observed(r, c)) cols.push_back(c);
    }
    for (std::size_t i = 0; i < reference.size(); ++i) {
      const std::size_t q = reference[i];
      double d = 0.0;
      for (std::size_t c : cols) {
        if (schema[c].is_categorical()) {
          d += dataset.category(r, c) != dataset.category(q, c) ? 1.0 : 0.0;
        } else if (range[c] > 0.0) {
          d += std::abs(std_data.value(r, c) - std_data.value(q, c)) / range[c];
        }
      }
      dist[i] = {cols.empty() ? 0.0 : d / static_cast<double>(cols.size()), q};
    }
    std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k), dist.end());

    for (std::size_t c = 0; c < schema.size(); ++c) {
      if (dataset.observed(r, c)) continue;
      if (schema[c].is_categorical()) {
        std::vector<std::size_t> counts(schema[c].category_count(), 0);
        for (std::size_t i = 0; i < k; ++i) ++counts[dataset.category(dist[i].second, c)];
        fill(res, r, c, static_cast<double>(vote(counts)));
      } else {
        double s = 0.0;
        for (std::size_t i = 0; i < k; ++i) s += dataset.value(dist[i].second, c);
        fill(res, r, c, s / static_cast<double>(k));
      }
    }
  }
  return res;
}

// ---------------------------------------------------------------------------
// Iterative ridge

RidgeFit ridge_solve(const std::vector<double>& xtx, const std::vector<double>& xty, std::size_t p,
                     double lambda) {
  if (xtx.size() != p * p || xty.size() != p) throw ShapeError("ridge_solve: system size mismatch");
  if (!(lambda >= 0.0)) throw ConfigError("ridge lambda must be >= 0");
  for (int attempt = 0; attempt < 13; ++attempt) {
    std::vector<double> l(p * p, 0.0);
    bool ok = true;
    for (std::size_t i = 0; i < p && ok; ++i) {
      for (std::size_t j = 0; j <= i; ++j) {
        double s = xtx[i * p + j] + (i == j && i > 0 ? lambda : 0.0);
        for (std::size_t m = 0; m < j; ++m) s -= l[i * p + m] * l[j * p + m];
        if (i == j) {
          if (!(s > 1e-12 * std::max(1.0, std::abs(xtx[i * p + i])))) {
            ok = false;
            break;
          }
          l[i * p + i] = std::sqrt(s);
        } else {
          l[i * p + j] = s / l[j * p + j];
        }
      }
    }
    if (ok) {
      std::vector<double> y(p);
      for (std::size_t i = 0; i < p; ++i) {
        double s = xty[i];
        for (std::size_t m = 0; m < i; ++m) s -= l[i * p + m] * y[m];
        y[i] = s / l[i * p + i];
      }
      std::vector<double> b(p);
      for (std::size_t i = p; i-- > 0;) {
        double s = y[i];
        for (std::size_t m = i + 1; m < p; ++m) s -= l[m * p + i] * b[m];
        b[i] = s / l[i * p + i];
      }
      return {std::move(b), lambda};
    }
    const double next = lambda > 0.0 ? lambda * 10.0 : 1e-8;
    std::clog << "[cablevae] warning: ridge system not positive definite at lambda=" << lambda
              << ", retrying with " << next << "\n";
    lambda = next;
  }
  throw DataError("ridge system stays singular after increasing lambda");
}

ImputationResult iterative_impute(const TabularDataset& dataset, std::size_t rounds, double ridge_lambda) {
  if (rounds < 1) throw ConfigError("iterative: rounds must be >= 1");
  if (!(ridge_lambda >= 0.0) || !std::isfinite(ridge_lambda)) throw ConfigError("iterative: ridge_lambda must be >= 0");
  const auto& schema = dataset.schema();
  ImputationResult res = start_result(dataset, "iterative", {{"rounds", rounds}, {"ridge_lambda", ridge_lambda}});

  std::vector<std::size_t> columns;
  for (std::size_t c = 0; c < schema.size(); ++c) {
    if (dataset.observed_count(c) < dataset.rows()) {
      if (dataset.observed_count(c) == 0) throw DataError("column '" + schema[c].name + "' has no observed values");
      columns.push_back(c);
    }
  }
  if (columns.empty()) return res;

  const Preprocessor pre = fit_preprocessor(dataset);
  TabularDataset work = transform(dataset, pre);
  for (std::size_t c : columns) {
    double fill_value;
    if (schema[c].is_categorical()) {
      fill_value = static_cast<double>(pre.stats(c).modal_index);
    } else {
      double s = 0.0;
      for (std::size_t r = 0; r < work.rows(); ++r) {
        if (work.observed(r, c)) s += work.value(r, c);
      }
      fill_value = s / static_cast<double>(dataset.observed_count(c));
    }
    for (std::size_t r = 0; r < work.rows(); ++r) {
      if (!dataset.observed(r, c)) work.set(r, c, fill_value);
    }
  }

  auto features = [&](std::size_t r, std::size_t target, std::vector<double>& x) {
    x.clear();
    x.push_back(1.0);
    for (std::size_t c = 0; c < schema.size(); ++c) {
      if (c == target) continue;
      if (schema[c].is_categorical()) {
        for (std::size_t k = 0; k < schema[c].category_count(); ++k) {
          x.push_back(work.category(r, c) == k ? 1.0 : 0.0);
        }
      } else {
        x.push_back(work.value(r, c));
      }
    }
  };

  std::vector<double> x;
  for (std::size_t round = 0; round < rounds; ++round) {
    for (std::size_t t : columns) {
      features(0, t, x);
      const std::size_t p = x.size();
      const std::size_t outputs = schema[t].is_categorical() ? schema[t].category_count() : 1;
      std::vector<double> xtx(p * p, 0.0);
      std::vector<std::vector<double>> xty(outputs, std::vector<double>(p, 0.0));
      for (std::size_t r = 0; r < work.rows(); ++r) {
        if (!dataset.observed(r, t)) continue;
        features(r, t, x);
        for (std::size_t i = 0; i < p; ++i) {
          if (x[i] == 0.0) continue;
          for (std::size_t j = 0; j < p; ++j) xtx[i * p + j] += x[i] * x[j];
        }
        for (std::size_t o = 0; o < outputs; ++o) {
          const double y = schema[t].is_categorical() ? (work.category(r, t) == o ? 1.0 : 0.0) : work.value(r, t);
          if (y == 0.0) continue;
          for (std::size_t i = 0; i < p; ++i) xty[o][i] += x[i] * y;
        }
      }
      std::vector<std::vector<double>> beta;
      for (std::size_t o = 0; o < outputs; ++o) beta.push_back(ridge_solve(xtx, xty[o], p, ridge_lambda).coefficients);

      for (std::size_t r = 0; r < work.rows(); ++r) {
        if (dataset.observed(r, t)) continue;
        features(r, t, x);
        std::vector<double> score(outputs, 0.0);
        for (std::size_t o = 0; o < outputs; ++o) {
          for (std::size_t i = 0; i < p; ++i) score[o] += beta[o][i] * x[i];
        }
        if (schema[t].is_categorical()) {
          work.set(r, t, static_cast<double>(std::max_element(score.begin(), score.end()) - score.begin()));
        } else {
          work.set(r, t, score[0]);
        }
      }
    }
  }

  for (std::size_t c : columns) {
    for (std::size_t r = 0; r < dataset.rows(); ++r) {
      if (dataset.observed(r, c)) continue;
      const double v = schema[c].is_categorical() ? work.value(r, c) : pre.inverse(c, work.value(r, c));
      if (!std::isfinite(v)) throw DivergenceError("iterative imputation produced a non-finite value");
      fill(res, r, c, v);
    }
  }
  return res;
}

}  // namespace cablevae
