#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <vector>

namespace metaopt {

// A labelled classification dataset. Inputs are kept as doubles in memory;
// the on-disk format stores them as f32, so a save/load round trip after
// generation is exact (generators pass through f32 before returning).
struct Dataset {
  Eigen::MatrixXd inputs;            // num_examples x input_dim, row per example
  std::vector<std::int32_t> labels;  // one per example, in [0, num_classes)
  int num_classes = 0;
  std::vector<std::string> notes;    // normalization warnings etc.

  int num_examples() const { return static_cast<int>(inputs.rows()); }
  int input_dim() const { return static_cast<int>(inputs.cols()); }
};

// Mixture of spherical Gaussians, one component per class, labels balanced.
// Inputs are z-scored after generation.
Dataset make_gaussian_mixture(int num_classes, int input_dim, int num_examples,
                              double spread, std::uint64_t seed);

// The classic intertwined two-spirals task in 2-D, with additive noise.
Dataset make_two_spirals(int num_examples, double noise, std::uint64_t seed);

// Center each input dimension and rescale it to unit variance (population
// variance). Dimensions whose variance is below 1e-12 are only centered; a
// note naming the dimension is appended to dataset.notes.
void normalize_dataset(Dataset& ds);

// Random Gaussian projection to proj_dim columns followed by z-scoring.
// With identity_projection=true (a test hook) the projection matrix is the
// identity, which requires proj_dim == input_dim.
Dataset project_dataset(const Dataset& source, int proj_dim, std::uint64_t seed,
                        bool identity_projection = false);

// Parse "p0,p1,...,p63,label" CSV rows (no header) into a dataset.
// Used for the 8x8 downsampled handwritten digits corpus.
Dataset load_digits_csv(const std::string& path);

// MOPTDS1 container: magic, then u32 example count / input dim / class count
// (little-endian), then f32 inputs row-major, then i32 labels.
void save_dataset(const Dataset& ds, const std::string& path);
Dataset load_dataset(const std::string& path);

}  // namespace metaopt
