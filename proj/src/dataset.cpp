#include "metaopt/dataset.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "metaopt/errors.hpp"
#include "metaopt/num.hpp"
#include "metaopt/rng.hpp"

namespace metaopt {
namespace {

constexpr char kMagic[8] = {'M', 'O', 'P', 'T', 'D', 'S', '1', '\0'};

void write_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::istream& in, const std::string& path) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4))
    throw IoError("truncated dataset file: " + path);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) |
         (static_cast<std::uint32_t>(b[3]) << 24);
}

// Snap every input to the nearest f32 so in-memory data matches what a
// save/load round trip would produce.
void snap_to_f32(Dataset& ds) {
  for (int r = 0; r < ds.inputs.rows(); ++r)
    for (int c = 0; c < ds.inputs.cols(); ++c)
      ds.inputs(r, c) = static_cast<double>(static_cast<float>(ds.inputs(r, c)));
}

}  // namespace

Dataset make_gaussian_mixture(int num_classes, int input_dim, int num_examples,
                              double spread, std::uint64_t seed) {
  if (num_classes < 2) throw InvalidArgument("make_gaussian_mixture: need >= 2 classes");
  if (input_dim < 1 || num_examples < num_classes)
    throw InvalidArgument("make_gaussian_mixture: bad shape request");
  if (!(spread > 0)) throw InvalidArgument("make_gaussian_mixture: spread must be > 0");

  Eigen::MatrixXd means(num_classes, input_dim);
  {
    Rng mean_rng(Rng::mix(seed, 0x6d65616eULL));  // "mean"
    for (int c = 0; c < num_classes; ++c)
      for (int d = 0; d < input_dim; ++d) means(c, d) = 2.0 * mean_rng.normal();
  }

  Dataset ds;
  ds.num_classes = num_classes;
  ds.inputs.resize(num_examples, input_dim);
  ds.labels.resize(num_examples);
  for (int i = 0; i < num_examples; ++i) {
    int c = i % num_classes;  // balanced labels
    ds.labels[i] = c;
    Rng rng(Rng::mix(seed, 0x676d78ULL, static_cast<std::uint64_t>(i)));
    for (int d = 0; d < input_dim; ++d)
      ds.inputs(i, d) = means(c, d) + spread * rng.normal();
  }
  normalize_dataset(ds);
  snap_to_f32(ds);
  return ds;
}

Dataset make_two_spirals(int num_examples, double noise, std::uint64_t seed) {
  if (num_examples < 4) throw InvalidArgument("make_two_spirals: too few examples");
  if (noise < 0) throw InvalidArgument("make_two_spirals: noise must be >= 0");

  Dataset ds;
  ds.num_classes = 2;
  ds.inputs.resize(num_examples, 2);
  ds.labels.resize(num_examples);
  int per_class = (num_examples + 1) / 2;
  for (int i = 0; i < num_examples; ++i) {
    int c = i % 2;
    int j = i / 2;  // position along the spiral arm
    double frac = per_class > 1 ? static_cast<double>(j) / (per_class - 1) : 0.0;
    double angle = 3.0 * M_PI * frac;
    double radius = 0.2 + frac;
    double x = radius * std::sin(angle);
    double y = radius * std::cos(angle);
    if (c == 1) {
      x = -x;
      y = -y;
    }
    Rng rng(Rng::mix(seed, 0x737072ULL, static_cast<std::uint64_t>(i)));
    ds.inputs(i, 0) = x + noise * rng.normal();
    ds.inputs(i, 1) = y + noise * rng.normal();
    ds.labels[i] = c;
  }
  normalize_dataset(ds);
  snap_to_f32(ds);
  return ds;
}

void normalize_dataset(Dataset& ds) {
  int n = ds.num_examples();
  if (n == 0) throw InvalidArgument("normalize_dataset: empty dataset");
  for (int d = 0; d < ds.input_dim(); ++d) {
    double mean = ds.inputs.col(d).mean();
    ds.inputs.col(d).array() -= mean;
    double var = ds.inputs.col(d).squaredNorm() / n;
    if (var < 1e-12) {
      ds.notes.push_back("dimension " + std::to_string(d) +
                         " has (near) zero variance; left unscaled");
      continue;
    }
    ds.inputs.col(d) /= std::sqrt(var);
  }
}

Dataset project_dataset(const Dataset& source, int proj_dim, std::uint64_t seed,
                        bool identity_projection) {
  if (proj_dim < 1) throw InvalidArgument("project_dataset: proj_dim must be >= 1");
  int in_dim = source.input_dim();
  Dataset out;
  out.num_classes = source.num_classes;
  out.labels = source.labels;
  if (identity_projection) {
    if (proj_dim != in_dim)
      throw InvalidArgument("project_dataset: identity projection needs proj_dim == input_dim");
    out.inputs = source.inputs;
  } else {
    Eigen::MatrixXd proj(in_dim, proj_dim);
    Rng rng(Rng::mix(seed, 0x70726f6aULL));  // "proj"
    double scale = 1.0 / std::sqrt(static_cast<double>(in_dim));
    for (int r = 0; r < in_dim; ++r)
      for (int c = 0; c < proj_dim; ++c) proj(r, c) = scale * rng.normal();
    out.inputs = source.inputs * proj;
  }
  normalize_dataset(out);
  snap_to_f32(out);
  return out;
}

Dataset load_digits_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open digits csv: " + path);
  Dataset ds;
  std::vector<double> values;
  std::vector<std::int32_t> labels;
  std::string line;
  int cols = -1;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<double> row;
    while (std::getline(ss, cell, ',')) row.push_back(parse_double(cell, path));
    if (cols == -1) cols = static_cast<int>(row.size());
    if (static_cast<int>(row.size()) != cols || cols < 2)
      throw IoError(path + ":" + std::to_string(line_no) + ": inconsistent column count");
    labels.push_back(static_cast<std::int32_t>(row.back()));
    row.pop_back();
    values.insert(values.end(), row.begin(), row.end());
  }
  if (labels.empty()) throw IoError("digits csv is empty: " + path);
  int dim = cols - 1;
  int n = static_cast<int>(labels.size());
  ds.inputs.resize(n, dim);
  for (int i = 0; i < n; ++i)
    for (int d = 0; d < dim; ++d) ds.inputs(i, d) = values[static_cast<size_t>(i) * dim + d];
  ds.labels = std::move(labels);
  std::int32_t max_label = 0;
  for (auto l : ds.labels) {
    if (l < 0) throw IoError("digits csv has negative label: " + path);
    if (l > max_label) max_label = l;
  }
  ds.num_classes = max_label + 1;
  snap_to_f32(ds);
  return ds;
}

void save_dataset(const Dataset& ds, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  out.write(kMagic, 8);
  write_u32(out, static_cast<std::uint32_t>(ds.num_examples()));
  write_u32(out, static_cast<std::uint32_t>(ds.input_dim()));
  write_u32(out, static_cast<std::uint32_t>(ds.num_classes));
  for (int i = 0; i < ds.num_examples(); ++i)
    for (int d = 0; d < ds.input_dim(); ++d) {
      float f = static_cast<float>(ds.inputs(i, d));
      out.write(reinterpret_cast<const char*>(&f), 4);
    }
  for (auto l : ds.labels) {
    std::uint32_t u = static_cast<std::uint32_t>(l);
    write_u32(out, u);
  }
  if (!out) throw IoError("write failed: " + path);
}

Dataset load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open dataset: " + path);
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0)
    throw IoError("bad magic, not a MOPTDS1 dataset: " + path);
  std::uint32_t n = read_u32(in, path);
  std::uint32_t dim = read_u32(in, path);
  std::uint32_t classes = read_u32(in, path);
  if (n == 0 || dim == 0 || classes < 2)
    throw IoError("dataset header out of range: " + path);
  Dataset ds;
  ds.num_classes = static_cast<int>(classes);
  ds.inputs.resize(n, dim);
  for (std::uint32_t i = 0; i < n; ++i)
    for (std::uint32_t d = 0; d < dim; ++d) {
      float f;
      if (!in.read(reinterpret_cast<char*>(&f), 4))
        throw IoError("truncated dataset file: " + path);
      ds.inputs(i, d) = static_cast<double>(f);
    }
  ds.labels.resize(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    std::uint32_t u = read_u32(in, path);
    ds.labels[i] = static_cast<std::int32_t>(u);
    if (ds.labels[i] < 0 || ds.labels[i] >= ds.num_classes)
      throw IoError("label out of range in " + path);
  }
  return ds;
}

}  // namespace metaopt
