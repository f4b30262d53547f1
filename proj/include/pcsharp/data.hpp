#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "pcsharp/matrix.hpp"

namespace pcsharp {

struct Dataset {
  std::string name;
  Matrix train, valid, test;
  std::size_t num_vars = 0;
  bool binary = true;
};

struct DebdShape {
  std::string_view name;
  std::size_t vars, train, valid, test;
};

/// Published shapes of the 20 binary density estimation benchmarks.
const std::vector<DebdShape>& debd_registry();
std::optional<DebdShape> debd_shape(std::string_view name);

/// Reads `<name>.{train,valid,test}.data` from `root` or `root/<name>/`.
/// Each line is a comma-separated 0/1 row. Throws MissingFile, ParseError
/// (with file and line), or ShapeMismatch when a registered name disagrees
/// with the published counts.
Dataset load_debd(const std::string& name, const std::string& root);

struct FractionSpec {
  double fraction = 1.0;  // (0, 1]
  std::uint64_t seed = 0;
};

/// Keeps the first max(1, round(f N)) rows of one seeded permutation of the
/// training split, so smaller fractions nest inside larger ones at a fixed
/// seed. Valid and test are untouched.
Dataset subsample(const Dataset& dataset, const FractionSpec& spec);

const std::vector<std::string>& manifold_names();

/// Noise-free curves, parameter t drawn uniformly:
///   spiral               (t cos 4πt, t sin 4πt), t in [0,1]
///   pinwheel             5 arms, radius r in [0.2,1], angle 2πk/5 + 1.2 r
///   two_moons            (cos t, sin t) or (1 - cos t, 0.5 - sin t), t in [0,π]
///   helix                (cos t, sin t, t / 4π), t in [0,4π]
///   interlocked_circles  (cos t, sin t, 0) or (1 + cos t, 0, sin t)
///   bent_lissajous       (sin 3t, sin 2t, 0.5 cos 4t)
///   twisted_eight        (sin t, sin t cos t, 0.5 sin(t/2)) t in [0,4π]
///   knotted              trefoil (sin t + 2 sin 2t, cos t - 2 cos 2t, -sin 3t) / 3
/// plus i.i.d. N(0, noise²) per coordinate. Train, valid and test each get
/// `n_per_split` rows. Throws UnknownManifold.
Dataset gen_manifold(const std::string& name, std::size_t n_per_split = 1000, double noise = 0.05,
                     std::uint64_t seed = 0);

/// Affine map of every split to [-1, 1] per column using train min/max.
/// Constant columns map to 0.
void minmax_scale(Dataset& dataset);

/// Header `x0,x1,...`, then one row per line.
void write_csv(std::ostream& out, const Matrix& data);
/// Reads write_csv output (a header line is skipped when it is not numeric).
/// Throws MissingFile or ParseError.
Matrix read_csv(const std::string& path);
/// Comma-separated numeric rows without a header. Throws ParseError.
Matrix parse_rows(std::istream& in, const std::string& label, bool binary_only);

}  // namespace pcsharp
