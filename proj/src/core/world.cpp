// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The patchot Authors

#include "world.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "errors.hpp"

namespace patchot {

namespace {

Vector gaussian(int n, double sigma, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  Vector v(n);
  for (int i = 0; i < n; ++i) v(i) = sigma * g(rng);
  return v;
}

}  // namespace

const char* split_name(Split split) {
  switch (split) {
    case Split::kBase: return "base";
    case Split::kVal: return "val";
    case Split::kNovel: return "novel";
  }
  return "?";
}

Split parse_split(const std::string& name) {
  if (name == "base") return Split::kBase;
  if (name == "val") return Split::kVal;
  if (name == "novel") return Split::kNovel;
  throw ConfigError("split", "expected base, val or novel, got '" + name + "'");
}

void WorldConfig::validate() const {
  if (base_classes < 2) throw ConfigError("world.base_classes", "need at least 2");
  if (val_classes < 0) throw ConfigError("world.val_classes", "must be nonnegative");
  if (novel_classes < 1) throw ConfigError("world.novel_classes", "need at least 1");
  if (latent_dim < 1) throw ConfigError("world.latent_dim", "must be positive");
  if (!(mean_scale > 0)) throw ConfigError("world.mean_scale", "must be positive");
  if (!(margin >= 0)) throw ConfigError("world.margin", "must be nonnegative");
  if (!(intra_class_sigma > 0)) throw ConfigError("world.intra_class_sigma", "must be positive");
  if (!(crop_sigma >= 0)) throw ConfigError("world.crop_sigma", "must be nonnegative");
  if (!(semantic_flip_prob >= 0 && semantic_flip_prob <= 1)) {
    throw ConfigError("world.semantic_flip_prob", "must lie in [0, 1]");
  }
  if (!(background_sigma > 0)) throw ConfigError("world.background_sigma", "must be positive");
  if (parts_per_class < 1) throw ConfigError("world.parts_per_class", "must be positive");
  if (!(part_sigma >= 0)) throw ConfigError("world.part_sigma", "must be nonnegative");
  if (!(novel_mixing >= 0 && novel_mixing <= 1)) {
    throw ConfigError("world.novel_mixing", "must lie in [0, 1]");
  }
  if (max_attempts < 1) throw ConfigError("world.max_attempts", "must be positive");
}

int SyntheticWorld::split_begin(Split split) const {
  switch (split) {
    case Split::kBase: return 0;
    case Split::kVal: return config.base_classes;
    case Split::kNovel: return config.base_classes + config.val_classes;
  }
  return 0;
}

int SyntheticWorld::split_size(Split split) const {
  switch (split) {
    case Split::kBase: return config.base_classes;
    case Split::kVal: return config.val_classes;
    case Split::kNovel: return config.novel_classes;
  }
  return 0;
}

SyntheticWorld generate_world(const WorldConfig& config) {
  config.validate();
  std::mt19937_64 rng(config.seed);
  const int total = config.base_classes + config.val_classes + config.novel_classes;
  const int dim = config.latent_dim;
  SyntheticWorld world;
  world.config = config;
  world.class_means = Matrix::Zero(total, dim);
  std::uniform_int_distribution<int> pick_base(0, config.base_classes - 1);

  for (int k = 0; k < total; ++k) {
    bool accepted = false;
    for (int attempt = 0; attempt < config.max_attempts && !accepted; ++attempt) {
      Vector candidate = gaussian(dim, config.mean_scale, rng);
      if (k >= config.base_classes && config.novel_mixing > 0) {
        const int a = pick_base(rng);
        const int b = pick_base(rng);
        const Vector mix = 0.5 * (world.class_means.row(a) + world.class_means.row(b)).transpose();
        candidate = (1.0 - config.novel_mixing) * candidate + config.novel_mixing * mix;
      }
      accepted = true;
      for (int j = 0; j < k && accepted; ++j) {
        accepted = (world.class_means.row(j).transpose() - candidate).norm() >= config.margin;
      }
      if (accepted) world.class_means.row(k) = candidate.transpose();
    }
    if (!accepted) {
      throw ConfigError("world.margin", "could not place class " + std::to_string(k) + " of " +
                                            std::to_string(total) + " after " +
                                            std::to_string(config.max_attempts) + " attempts");
    }
  }

  world.parts.reserve(static_cast<size_t>(total));
  for (int k = 0; k < total; ++k) {
    Matrix parts(config.parts_per_class, dim);
    for (int p = 0; p < config.parts_per_class; ++p) {
      parts.row(p) = world.class_means.row(k) + gaussian(dim, config.part_sigma, rng).transpose();
    }
    world.parts.push_back(std::move(parts));
  }
  return world;
}

ImageSample sample_image(const SyntheticWorld& world, int class_id, std::mt19937_64& rng) {
  if (class_id < 0 || class_id >= world.total_classes()) throw_invalid("class id out of range");
  ImageSample image;
  image.label = class_id;
  image.class_id = class_id;
  const Vector offset = gaussian(world.latent_dim(), world.config.intra_class_sigma, rng);
  image.parts = world.parts[static_cast<size_t>(class_id)].rowwise() + offset.transpose();
  return image;
}

Patches crop_patches(const SyntheticWorld& world, const ImageSample& image, int n_p,
                     std::mt19937_64& rng) {
  if (n_p < 1) throw_invalid("n_p must be positive");
  const WorldConfig& cfg = world.config;
  const int dim = world.latent_dim();
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> pick_part(0, static_cast<int>(image.parts.rows()) - 1);
  Patches out;
  out.latents.resize(n_p, dim);
  out.flipped.assign(static_cast<size_t>(n_p), false);
  for (int i = 0; i < n_p; ++i) {
    if (unit(rng) < cfg.semantic_flip_prob) {
      out.flipped[static_cast<size_t>(i)] = true;
      out.latents.row(i) = gaussian(dim, cfg.background_sigma, rng).transpose();
    } else {
      const int part = pick_part(rng);
      out.latents.row(i) = image.parts.row(part) + gaussian(dim, cfg.crop_sigma, rng).transpose();
    }
  }
  return out;
}

EpisodeTask sample_episode(const SyntheticWorld& world, Split split, int ways, int shots,
                           int queries, std::mt19937_64& rng) {
  const int pool = world.split_size(split);
  if (ways < 1 || shots < 1 || queries < 1) throw_invalid("ways, shots and queries must be positive");
  if (ways > pool) {
    throw_invalid(std::string("split ") + split_name(split) + " has " + std::to_string(pool) +
                  " classes, fewer than " + std::to_string(ways) + " ways");
  }
  std::vector<int> ids(static_cast<size_t>(pool));
  std::iota(ids.begin(), ids.end(), world.split_begin(split));
  // Partial Fisher-Yates keeps the draw independent of the library's shuffle.
  for (int i = 0; i < ways; ++i) {
    std::uniform_int_distribution<int> pick(i, pool - 1);
    std::swap(ids[static_cast<size_t>(i)], ids[static_cast<size_t>(pick(rng))]);
  }
  EpisodeTask task;
  task.ways = ways;
  task.shots = shots;
  task.queries = queries;
  task.classes.assign(ids.begin(), ids.begin() + ways);
  for (int w = 0; w < ways; ++w) {
    for (int s = 0; s < shots; ++s) {
      ImageSample image = sample_image(world, task.classes[static_cast<size_t>(w)], rng);
      image.label = w;
      task.support.push_back(std::move(image));
    }
  }
  for (int w = 0; w < ways; ++w) {
    for (int q = 0; q < queries; ++q) {
      ImageSample image = sample_image(world, task.classes[static_cast<size_t>(w)], rng);
      image.label = w;
      task.query.push_back(std::move(image));
    }
  }
  return task;
}

}  // namespace patchot
