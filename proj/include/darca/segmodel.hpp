#pragma once

// Trainable segmenter: a probabilistic atlas (per-voxel class frequencies in
// a common reference space) combined with per-class intensity Gaussians fit
// on z-normalized images. The split mirrors a network's frozen early layers
// (spatial prior) versus its last layer (appearance): fine-tuning refits
// only the Gaussians and never touches the prior.
//
// Atlas smoothing works on class frequencies, prior = (freq + a) / (1 + K*a)
// with a = 1/32, so no class ever gets exactly zero prior (which would veto
// intensity evidence outright) and training is invariant to uniformly
// duplicating the cohort.
//
// Determinism: subjects are processed in id order regardless of input order,
// and every reduction is ordered, so retraining reproduces bit-identical
// models.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "darca/cohort.hpp"
#include "darca/core.hpp"
#include "darca/registration.hpp"
#include "darca/volume_io.hpp"

namespace darca {

inline constexpr double kAtlasSmoothing = 1.0 / 32.0;
inline constexpr double kVarianceFloor = 1e-4;

enum class LabelKind { manual, pseudo };

struct LabeledSubject {
  SubjectRecord record;
  Volume image;
  LabelMap labels;
  LabelKind kind = LabelKind::manual;
};

struct ClassGaussian {
  double mean = 0.0;
  double variance = 1.0;
  bool present = true;
};

struct ModelProvenance {
  std::string mode = "train";
  std::string reference_subject;
  std::vector<std::string> training_ids;
  double blend = -1.0;  // < 0 when not a fine-tuned model
};

struct SegmenterModel {
  GridGeometry reference_geometry;
  std::vector<std::uint8_t> class_list;           // sorted, includes background 0
  std::vector<std::vector<float>> atlas_prior;    // [class][voxel], sums to 1 per voxel
  std::vector<ClassGaussian> appearance;          // parallel to class_list
  ModelProvenance provenance;

  std::size_t class_index(std::uint8_t label) const {
    for (std::size_t i = 0; i < class_list.size(); ++i)
      if (class_list[i] == label) return i;
    throw std::runtime_error("model has no class " + std::to_string(label));
  }

  void validate() const {
    reference_geometry.validate();
    if (class_list.empty() || class_list.front() != 0)
      throw std::runtime_error("model class list must start with background 0");
    if (atlas_prior.size() != class_list.size() || appearance.size() != class_list.size())
      throw std::runtime_error("model per-class containers are inconsistent");
    const std::size_t n = reference_geometry.voxel_count();
    for (const auto& grid : atlas_prior)
      if (grid.size() != n) throw std::runtime_error("atlas prior grid size mismatch");
    for (std::size_t v = 0; v < n; v += 97) {  // spot check normalization
      double sum = 0.0;
      for (const auto& grid : atlas_prior) sum += grid[v];
      if (std::abs(sum - 1.0) > 1e-6)
        throw std::runtime_error("atlas prior does not sum to 1");
    }
    for (const auto& g : appearance)
      if (g.present && g.variance < kVarianceFloor)
        throw std::runtime_error("appearance variance below floor");
  }
};

struct Prediction {
  LabelMap labels;
  Volume max_posterior;  // per-voxel confidence of the chosen class
};

namespace detail {

// Subjects in id order; ties (duplicated subjects) keep input order.
inline std::vector<std::size_t> id_order(const std::vector<LabeledSubject>& subjects) {
  std::vector<std::size_t> order(subjects.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return subjects[a].record.id < subjects[b].record.id;
  });
  return order;
}

struct PooledStats {
  double sum = 0.0, sq = 0.0;
  std::size_t count = 0;
};

// Per-class intensity stats over z-normalized images in native space.
inline std::vector<PooledStats> pool_appearance(const std::vector<LabeledSubject>& subjects,
                                                const std::vector<std::size_t>& order,
                                                const std::vector<std::uint8_t>& classes) {
  std::vector<PooledStats> stats(classes.size());
  for (std::size_t oi : order) {
    const auto& s = subjects[oi];
    const Volume z = normalize_zscore(s.image);
    for (std::size_t v = 0; v < z.voxels.size(); ++v) {
      const std::uint8_t l = s.labels.voxels[v];
      for (std::size_t c = 0; c < classes.size(); ++c) {
        if (classes[c] == l) {
          stats[c].sum += z.voxels[v];
          stats[c].sq += static_cast<double>(z.voxels[v]) * z.voxels[v];
          stats[c].count += 1;
          break;
        }
      }
    }
  }
  return stats;
}

inline ClassGaussian to_gaussian(const PooledStats& p) {
  ClassGaussian g;
  if (p.count == 0) {
    g.present = false;
    return g;
  }
  g.mean = p.sum / static_cast<double>(p.count);
  g.variance = std::max(kVarianceFloor, p.sq / static_cast<double>(p.count) - g.mean * g.mean);
  return g;
}

// Expected-intensity image of the model in atlas space; serves as the fixed
// image when registering an input onto the atlas.
inline Volume synthesize_template(const SegmenterModel& model) {
  Volume t(model.reference_geometry);
  for (std::size_t c = 0; c < model.class_list.size(); ++c) {
    if (!model.appearance[c].present) continue;
    const float mean = static_cast<float>(model.appearance[c].mean);
    const auto& prior = model.atlas_prior[c];
    for (std::size_t v = 0; v < t.voxels.size(); ++v) t.voxels[v] += prior[v] * mean;
  }
  return t;
}

}  // namespace detail

// Builds the atlas and appearance model from labeled subjects. The subject
// with the smallest id anchors the atlas: every other image is registered to
// it (z-normalized, moving onto fixed) and its labels are warped into
// reference_geometry before counting.
inline SegmenterModel train(const std::vector<LabeledSubject>& subjects,
                            const GridGeometry& reference_geometry,
                            const RegConfig& reg_cfg, unsigned jobs = 1) {
  if (subjects.empty()) throw std::invalid_argument("train: empty cohort");
  reference_geometry.validate();
  for (const auto& s : subjects)
    if (!(s.image.geom == s.labels.geom))
      throw std::invalid_argument("train: subject '" + s.record.id +
                                  "' image/label geometry mismatch");

  const auto order = detail::id_order(subjects);
  const std::string reference_id = subjects[order.front()].record.id;

  std::set<std::uint8_t> class_set{0};
  for (const auto& s : subjects)
    for (auto l : s.labels.label_set()) class_set.insert(l);
  const std::vector<std::uint8_t> classes(class_set.begin(), class_set.end());

  const Volume reference_z = normalize_zscore(subjects[order.front()].image);

  // Warp every subject's labels into the reference grid.
  std::vector<LabelMap> warped(subjects.size());
  parallel_for(order.size(), jobs, [&](std::size_t k) {
    const auto& s = subjects[order[k]];
    AffineTransform t;
    if (s.record.id != reference_id) {
      const Volume z = normalize_zscore(s.image);
      t = register_affine(z, reference_z, reg_cfg).transform;
    }
    warped[order[k]] = warp_labels(s.labels, t, reference_geometry);
  });

  SegmenterModel model;
  model.reference_geometry = reference_geometry;
  model.class_list = classes;
  model.provenance.mode = "train";
  model.provenance.reference_subject = reference_id;
  for (std::size_t oi : order) model.provenance.training_ids.push_back(subjects[oi].record.id);

  const std::size_t nvox = reference_geometry.voxel_count();
  std::vector<std::vector<std::uint32_t>> counts(classes.size(),
                                                 std::vector<std::uint32_t>(nvox, 0));
  for (std::size_t oi : order) {
    const auto& w = warped[oi];
    for (std::size_t v = 0; v < nvox; ++v) {
      const std::uint8_t l = w.voxels[v];
      for (std::size_t c = 0; c < classes.size(); ++c)
        if (classes[c] == l) {
          counts[c][v] += 1;
          break;
        }
    }
  }
  const double n = static_cast<double>(subjects.size());
  const double denom = 1.0 + kAtlasSmoothing * static_cast<double>(classes.size());
  model.atlas_prior.assign(classes.size(), std::vector<float>(nvox, 0.0f));
  for (std::size_t c = 0; c < classes.size(); ++c)
    for (std::size_t v = 0; v < nvox; ++v)
      model.atlas_prior[c][v] =
          static_cast<float>((counts[c][v] / n + kAtlasSmoothing) / denom);

  const auto pooled = detail::pool_appearance(subjects, order, classes);
  for (const auto& p : pooled) model.appearance.push_back(detail::to_gaussian(p));

  model.validate();
  return model;
}

// Maximum-a-posteriori labeling. The input is z-normalized and registered to
// the model's synthesized template; classification runs on the atlas grid
// (prior times Gaussian density, in log space) and the result is warped back
// through the inverse transform. Argmax ties resolve to the lowest class id.
inline Prediction predict(const SegmenterModel& model, const Volume& image,
                          const RegConfig& reg_cfg) {
  model.validate();
  const Volume z = normalize_zscore(image);
  const Volume atlas_template = detail::synthesize_template(model);
  // A structureless template (e.g. a uniform prior) gives registration
  // nothing to align; fall back to the identity mapping.
  const auto [tmin, tmax] =
      std::minmax_element(atlas_template.voxels.begin(), atlas_template.voxels.end());
  AffineTransform to_image;
  if (*tmax - *tmin > 1e-12)
    to_image = register_affine(z, atlas_template, reg_cfg).transform;

  const auto& g = model.reference_geometry;
  LabelMap atlas_labels(g);
  Volume atlas_conf(g);
  const std::size_t k = model.class_list.size();
  std::vector<double> log_norm(k), inv_two_var(k);
  for (std::size_t c = 0; c < k; ++c) {
    const auto& gauss = model.appearance[c];
    if (gauss.present) {
      log_norm[c] = -0.5 * std::log(2.0 * 3.14159265358979323846 * gauss.variance);
      inv_two_var[c] = 0.5 / gauss.variance;
    }
  }

  std::vector<double> scores(k);
  std::size_t i = 0;
  for (int zz = 0; zz < g.dims[2]; ++zz)
    for (int yy = 0; yy < g.dims[1]; ++yy)
      for (int xx = 0; xx < g.dims[0]; ++xx, ++i) {
        const double x = sample_trilinear(z, to_image.apply(g.voxel_to_physical(xx, yy, zz)));
        std::size_t best = 0;
        for (std::size_t c = 0; c < k; ++c) {
          double s = std::log(static_cast<double>(model.atlas_prior[c][i]));
          if (model.appearance[c].present) {
            const double d = x - model.appearance[c].mean;
            s += log_norm[c] - d * d * inv_two_var[c];
          }
          scores[c] = s;
          if (s > scores[best]) best = c;
        }
        atlas_labels.voxels[i] = model.class_list[best];
        double denom = 0.0;
        for (std::size_t c = 0; c < k; ++c) denom += std::exp(scores[c] - scores[best]);
        atlas_conf.voxels[i] = static_cast<float>(1.0 / denom);
      }

  const AffineTransform to_atlas = to_image.inverse();
  Prediction out{LabelMap(image.geom), Volume(image.geom)};
  i = 0;
  for (int zz = 0; zz < image.geom.dims[2]; ++zz)
    for (int yy = 0; yy < image.geom.dims[1]; ++yy)
      for (int xx = 0; xx < image.geom.dims[0]; ++xx, ++i) {
        const auto p = to_atlas.apply(image.geom.voxel_to_physical(xx, yy, zz));
        out.labels.voxels[i] = sample_nearest(atlas_labels, p);
        out.max_posterior.voxels[i] = sample_nearest(atlas_conf, p);
      }
  return out;
}

// Scratch adaptation: retrain on source plus selected target subjects.
inline SegmenterModel adapt_scratch(const std::vector<LabeledSubject>& source,
                                    const std::vector<LabeledSubject>& target_selected,
                                    const GridGeometry& reference_geometry,
                                    const RegConfig& reg_cfg, unsigned jobs = 1) {
  std::vector<LabeledSubject> all = source;
  all.insert(all.end(), target_selected.begin(), target_selected.end());
  SegmenterModel model = train(all, reference_geometry, reg_cfg, jobs);
  model.provenance.mode = "scratch";
  return model;
}

// Fine-tune adaptation: the atlas prior is frozen bit-exactly; per-class
// Gaussians become (1-blend)*source + blend*target moment blends. Classes
// absent from the selection keep their source statistics.
inline SegmenterModel adapt_finetune(const SegmenterModel& model,
                                     const std::vector<LabeledSubject>& target_selected,
                                     double blend, const RegConfig& reg_cfg) {
  (void)reg_cfg;  // appearance refit happens in native space, no registration
  if (!(blend >= 0.0 && blend <= 1.0))
    throw std::invalid_argument("adapt_finetune: blend must be in [0,1]");
  if (blend == 0.0) return model;
  if (target_selected.empty())
    throw std::invalid_argument("adapt_finetune: empty selection with blend > 0");
  for (const auto& s : target_selected)
    if (!(s.image.geom == s.labels.geom))
      throw std::invalid_argument("adapt_finetune: subject '" + s.record.id +
                                  "' image/label geometry mismatch");

  const auto order = detail::id_order(target_selected);
  const auto pooled = detail::pool_appearance(target_selected, order, model.class_list);

  SegmenterModel out = model;
  for (std::size_t c = 0; c < model.class_list.size(); ++c) {
    if (pooled[c].count == 0) continue;
    const ClassGaussian target = detail::to_gaussian(pooled[c]);
    const ClassGaussian& source = model.appearance[c];
    ClassGaussian& dst = out.appearance[c];
    if (!source.present) {
      dst = target;
      continue;
    }
    dst.mean = (1.0 - blend) * source.mean + blend * target.mean;
    dst.variance =
        std::max(kVarianceFloor, (1.0 - blend) * source.variance + blend * target.variance);
  }
  out.provenance.mode = "finetune";
  out.provenance.blend = blend;
  for (std::size_t oi : order)
    out.provenance.training_ids.push_back(target_selected[oi].record.id);
  return out;
}

struct SubjectFailure {
  std::string subject_id;
  std::string message;
};

struct PseudoLabelResult {
  std::vector<LabeledSubject> labeled;
  std::vector<SubjectFailure> failures;
};

// Labels target images with the model's own argmax predictions.
inline PseudoLabelResult pseudo_label(
    const SegmenterModel& model,
    const std::vector<std::pair<SubjectRecord, Volume>>& target_images,
    const RegConfig& reg_cfg, unsigned jobs = 1) {
  const std::size_t n = target_images.size();
  std::vector<std::optional<LabeledSubject>> slots(n);
  std::vector<std::optional<SubjectFailure>> errors(n);
  parallel_for(n, jobs, [&](std::size_t i) {
    const auto& [record, image] = target_images[i];
    try {
      Prediction p = predict(model, image, reg_cfg);
      slots[i] = LabeledSubject{record, image, std::move(p.labels), LabelKind::pseudo};
    } catch (const std::exception& e) {
      errors[i] = SubjectFailure{record.id, e.what()};
    }
  });
  PseudoLabelResult out;
  for (std::size_t i = 0; i < n; ++i) {
    if (slots[i]) out.labeled.push_back(std::move(*slots[i]));
    if (errors[i]) out.failures.push_back(std::move(*errors[i]));
  }
  return out;
}

// ----- model serialization -----
//
// A model directory holds one FLOAT32 prior grid per class plus two text
// sidecars: appearance.csv (class,mean,variance; nan marks an absent class)
// and provenance.txt. Doubles are written with 17 significant digits.

inline void save_model(const SegmenterModel& model, const std::filesystem::path& dir) {
  model.validate();
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "appearance.csv", std::ios::trunc);
    if (!out) throw std::runtime_error("save_model: cannot write appearance.csv");
    out << "class,mean,variance\n";
    for (std::size_t c = 0; c < model.class_list.size(); ++c) {
      const auto& g = model.appearance[c];
      char buf[96];
      if (g.present)
        std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g\n", model.class_list[c], g.mean,
                      g.variance);
      else
        std::snprintf(buf, sizeof(buf), "%d,nan,nan\n", model.class_list[c]);
      out << buf;
    }
  }
  {
    std::ofstream out(dir / "provenance.txt", std::ios::trunc);
    out << "mode = " << model.provenance.mode << "\n";
    out << "reference_subject = " << model.provenance.reference_subject << "\n";
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", model.provenance.blend);
    out << "blend = " << buf << "\n";
    out << "trained_on =";
    for (const auto& id : model.provenance.training_ids) out << " " << id;
    out << "\n";
  }
  for (std::size_t c = 0; c < model.class_list.size(); ++c) {
    char name[32];
    std::snprintf(name, sizeof(name), "prior_c%03d.vol", model.class_list[c]);
    Volume grid(model.reference_geometry);
    grid.voxels = model.atlas_prior[c];
    write_volume(grid, dir / name);
  }
}

inline SegmenterModel load_model(const std::filesystem::path& dir) {
  SegmenterModel model;
  {
    std::ifstream in(dir / "appearance.csv");
    if (!in) throw std::runtime_error("load_model: missing appearance.csv in " + dir.string());
    std::string line;
    if (!std::getline(in, line) || line.rfind("class,mean,variance", 0) != 0)
      throw std::runtime_error("load_model: malformed appearance.csv header");
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      int cls;
      char mean_buf[64], var_buf[64];
      if (std::sscanf(line.c_str(), "%d,%63[^,],%63s", &cls, mean_buf, var_buf) != 3)
        throw std::runtime_error("load_model: malformed appearance row '" + line + "'");
      model.class_list.push_back(static_cast<std::uint8_t>(cls));
      ClassGaussian g;
      g.mean = std::strtod(mean_buf, nullptr);
      g.variance = std::strtod(var_buf, nullptr);
      g.present = !std::isnan(g.mean);
      model.appearance.push_back(g);
    }
  }
  {
    std::ifstream in(dir / "provenance.txt");
    if (!in) throw std::runtime_error("load_model: missing provenance.txt in " + dir.string());
    std::string line;
    while (std::getline(in, line)) {
      const auto eq = line.find(" = ");
      if (eq == std::string::npos) {
        const auto eq2 = line.find(" =");
        if (eq2 != std::string::npos && eq2 + 2 == line.size()) continue;  // empty list
      }
      if (eq == std::string::npos) continue;
      const std::string key = line.substr(0, eq);
      const std::string value = line.substr(eq + 3);
      if (key == "mode") model.provenance.mode = value;
      else if (key == "reference_subject") model.provenance.reference_subject = value;
      else if (key == "blend") model.provenance.blend = std::strtod(value.c_str(), nullptr);
      else if (key == "trained_on") {
        std::istringstream ss(value);
        std::string id;
        while (ss >> id) model.provenance.training_ids.push_back(id);
      }
    }
  }
  for (std::size_t c = 0; c < model.class_list.size(); ++c) {
    char name[32];
    std::snprintf(name, sizeof(name), "prior_c%03d.vol", model.class_list[c]);
    const Volume grid = read_volume(dir / name);
    if (c == 0) model.reference_geometry = grid.geom;
    else if (!(grid.geom == model.reference_geometry))
      throw std::runtime_error("load_model: prior grids disagree on geometry");
    model.atlas_prior.push_back(grid.voxels);
  }
  model.validate();
  return model;
}

}  // namespace darca
