// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The patchot Authors

// Synthetic few-shot world. Every class owns one or more part centers in a
// latent space; an image is its class's parts plus a per-image offset, and a
// crop is one part plus noise. With probability semantic_flip_prob a crop
// lands on background instead and carries no class information.

#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "ot.hpp"

namespace patchot {

enum class Split { kBase, kVal, kNovel };

const char* split_name(Split split);
Split parse_split(const std::string& name);

struct WorldConfig {
  int base_classes = 64;
  int val_classes = 16;
  int novel_classes = 20;
  int latent_dim = 32;
  double mean_scale = 1.0;
  double margin = 2.0;  // minimum pairwise distance between class centers
  double intra_class_sigma = 0.5;
  double crop_sigma = 0.5;
  double semantic_flip_prob = 0.25;
  double background_sigma = 1.0;
  int parts_per_class = 1;
  double part_sigma = 0.0;
  // Held-out centers are (1 - a) * fresh + a * (mix of two base centers).
  double novel_mixing = 0.0;
  int max_attempts = 2000;
  std::uint64_t seed = 0;

  void validate() const;
};

struct SyntheticWorld {
  WorldConfig config;
  Matrix class_means;            // all classes, base first, then val, then novel
  std::vector<Matrix> parts;     // per class, parts_per_class x latent_dim

  int total_classes() const { return static_cast<int>(class_means.rows()); }
  int latent_dim() const { return static_cast<int>(class_means.cols()); }
  int split_begin(Split split) const;
  int split_size(Split split) const;
};

struct ImageSample {
  int label = 0;  // episode-local label, or the world class id outside episodes
  int class_id = 0;
  Matrix parts;
};

struct Patches {
  Matrix latents;  // n_p x latent_dim
  std::vector<bool> flipped;
};

SyntheticWorld generate_world(const WorldConfig& config);

ImageSample sample_image(const SyntheticWorld& world, int class_id, std::mt19937_64& rng);

Patches crop_patches(const SyntheticWorld& world, const ImageSample& image, int n_p,
                     std::mt19937_64& rng);

struct EpisodeTask {
  int ways = 0;
  int shots = 0;
  int queries = 0;
  std::vector<int> classes;  // world class ids, indexed by episode label
  std::vector<ImageSample> support;
  std::vector<ImageSample> query;
};

EpisodeTask sample_episode(const SyntheticWorld& world, Split split, int ways, int shots,
                           int queries, std::mt19937_64& rng);

}  // namespace patchot
