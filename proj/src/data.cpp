#include "pcsharp/data.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <numeric>
#include <ostream>
#include <random>

#include "pcsharp/error.hpp"

namespace pcsharp {

const std::vector<DebdShape>& debd_registry() {
  static const std::vector<DebdShape> reg = {
      {"nltcs", 16, 16181, 2157, 3236},     {"msnbc", 17, 291326, 38843, 58265},
      {"kdd", 65, 180092, 19907, 34955},    {"plants", 69, 17412, 2321, 3482},
      {"baudio", 100, 15000, 2000, 3000},   {"jester", 100, 9000, 1000, 4116},
      {"bnetflix", 100, 15000, 2000, 3000}, {"accidents", 111, 12758, 1700, 2551},
      {"tretail", 135, 22041, 2938, 4408},  {"pumsb_star", 163, 12262, 1635, 2452},
      {"dna", 180, 1600, 400, 1186},        {"kosarek", 190, 33375, 4450, 6675},
      {"msweb", 294, 29441, 3270, 5000},    {"tmovie", 500, 4524, 1002, 591},
      {"book", 500, 8700, 1159, 1739},      {"cwebkb", 839, 2803, 558, 838},
      {"cr52", 889, 6532, 1028, 1540},      {"c20ng", 910, 11293, 3764, 3764},
      {"bbc", 1058, 1670, 225, 330},        {"ad", 1556, 2461, 327, 491},
  };
  return reg;
}

std::optional<DebdShape> debd_shape(std::string_view name) {
  for (const auto& s : debd_registry())
    if (s.name == name) return s;
  return std::nullopt;
}

Matrix parse_rows(std::istream& in, const std::string& label, bool binary_only) {
  Matrix out;
  std::string line;
  std::vector<double> row;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    row.clear();
    const char* p = line.data();
    const char* end = p + line.size();
    while (true) {
      while (p < end && (*p == ' ' || *p == '\t')) ++p;
      double v = 0.0;
      auto [next, ec] = std::from_chars(p, end, v);
      if (ec != std::errc() || (binary_only && v != 0.0 && v != 1.0))
        throw Error(ErrorKind::ParseError, label + ": line " + std::to_string(lineno) + ": bad token '" +
                                               std::string(p, std::find(p, end, ',')) + "'");
      row.push_back(v);
      p = next;
      while (p < end && (*p == ' ' || *p == '\t')) ++p;
      if (p == end) break;
      if (*p != ',') throw Error(ErrorKind::ParseError, label + ": line " + std::to_string(lineno) + ": expected ','");
      ++p;
    }
    if (out.rows() > 0 && row.size() != out.cols())
      throw Error(ErrorKind::ParseError, label + ": line " + std::to_string(lineno) + ": expected " +
                                             std::to_string(out.cols()) + " columns, found " +
                                             std::to_string(row.size()));
    out.append_row(row);
  }
  return out;
}

namespace {

Matrix load_split(const std::string& name, const std::string& root, const std::string& split) {
  namespace fs = std::filesystem;
  const std::string file = name + "." + split + ".data";
  fs::path path = fs::path(root) / file;
  if (!fs::exists(path)) path = fs::path(root) / name / file;
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::MissingFile, "cannot open " + (fs::path(root) / file).string());
  return parse_rows(in, path.string(), true);
}

void check_shape(const std::string& what, std::size_t expected, std::size_t found) {
  if (expected != found)
    throw Error(ErrorKind::ShapeMismatch,
                what + ": expected " + std::to_string(expected) + ", found " + std::to_string(found));
}

}  // namespace

Dataset load_debd(const std::string& name, const std::string& root) {
  Dataset ds;
  ds.name = name;
  ds.train = load_split(name, root, "train");
  ds.valid = load_split(name, root, "valid");
  ds.test = load_split(name, root, "test");
  ds.num_vars = ds.train.cols();
  ds.binary = true;
  check_shape(name + " valid columns", ds.num_vars, ds.valid.cols());
  check_shape(name + " test columns", ds.num_vars, ds.test.cols());
  if (auto s = debd_shape(name)) {
    check_shape(name + " variables", s->vars, ds.num_vars);
    check_shape(name + " train rows", s->train, ds.train.rows());
    check_shape(name + " valid rows", s->valid, ds.valid.rows());
    check_shape(name + " test rows", s->test, ds.test.rows());
  }
  return ds;
}

Dataset subsample(const Dataset& dataset, const FractionSpec& spec) {
  if (!(spec.fraction > 0.0 && spec.fraction <= 1.0))
    throw Error(ErrorKind::InvalidArgument, "fraction must lie in (0, 1]");
  const std::size_t n = dataset.train.rows();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(spec.seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  const auto count =
      std::min(n, std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(spec.fraction * double(n)))));
  idx.resize(count);
  Dataset out = dataset;
  out.train = dataset.train.select_rows(idx);
  return out;
}

const std::vector<std::string>& manifold_names() {
  static const std::vector<std::string> names = {"spiral",        "pinwheel",       "two_moons",
                                                 "helix",         "interlocked_circles", "bent_lissajous",
                                                 "twisted_eight", "knotted"};
  return names;
}

Dataset gen_manifold(const std::string& name, std::size_t n_per_split, double noise, std::uint64_t seed) {
  using std::numbers::pi;
  const auto& names = manifold_names();
  if (std::find(names.begin(), names.end(), name) == names.end())
    throw Error(ErrorKind::UnknownManifold, "unknown manifold '" + name + "'");
  if (!(noise >= 0.0)) throw Error(ErrorKind::InvalidArgument, "noise must be >= 0");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const bool three = name != "spiral" && name != "pinwheel" && name != "two_moons";
  auto point = [&]() -> std::vector<double> {
    const double u = unit(rng);
    if (name == "spiral") return {u * std::cos(4 * pi * u), u * std::sin(4 * pi * u)};
    if (name == "pinwheel") {
      const int arm = static_cast<int>(unit(rng) * 5.0) % 5;
      const double r = 0.2 + 0.8 * u;
      const double a = 2 * pi * arm / 5.0 + 1.2 * r;
      return {r * std::cos(a), r * std::sin(a)};
    }
    if (name == "two_moons") {
      const double t = pi * u;
      if (unit(rng) < 0.5) return {std::cos(t), std::sin(t)};
      return {1.0 - std::cos(t), 0.5 - std::sin(t)};
    }
    if (name == "helix") {
      const double t = 4 * pi * u;
      return {std::cos(t), std::sin(t), t / (4 * pi)};
    }
    if (name == "interlocked_circles") {
      const double t = 2 * pi * u;
      if (unit(rng) < 0.5) return {std::cos(t), std::sin(t), 0.0};
      return {1.0 + std::cos(t), 0.0, std::sin(t)};
    }
    if (name == "bent_lissajous") {
      const double t = 2 * pi * u;
      return {std::sin(3 * t), std::sin(2 * t), 0.5 * std::cos(4 * t)};
    }
    if (name == "twisted_eight") {
      const double t = 4 * pi * u;
      return {std::sin(t), std::sin(t) * std::cos(t), 0.5 * std::sin(t / 2)};
    }
    const double t = 2 * pi * u;  // knotted
    return {(std::sin(t) + 2 * std::sin(2 * t)) / 3, (std::cos(t) - 2 * std::cos(2 * t)) / 3, -std::sin(3 * t) / 3};
  };
  auto split = [&]() {
    Matrix m(n_per_split, three ? 3 : 2);
    for (std::size_t r = 0; r < n_per_split; ++r) {
      auto p = point();
      for (std::size_t c = 0; c < p.size(); ++c) m(r, c) = p[c] + (noise > 0.0 ? noise * gauss(rng) : 0.0);
    }
    return m;
  };
  Dataset ds;
  ds.name = name;
  ds.train = split();
  ds.valid = split();
  ds.test = split();
  ds.num_vars = three ? 3 : 2;
  ds.binary = false;
  return ds;
}

void minmax_scale(Dataset& dataset) {
  const std::size_t d = dataset.train.cols();
  for (std::size_t c = 0; c < d; ++c) {
    double lo = INFINITY, hi = -INFINITY;
    for (std::size_t r = 0; r < dataset.train.rows(); ++r) {
      lo = std::min(lo, dataset.train(r, c));
      hi = std::max(hi, dataset.train(r, c));
    }
    for (Matrix* m : {&dataset.train, &dataset.valid, &dataset.test})
      for (std::size_t r = 0; r < m->rows(); ++r)
        (*m)(r, c) = hi > lo ? 2.0 * ((*m)(r, c) - lo) / (hi - lo) - 1.0 : 0.0;
  }
  dataset.binary = false;
}

void write_csv(std::ostream& out, const Matrix& data) {
  for (std::size_t c = 0; c < data.cols(); ++c) out << (c ? ",x" : "x") << c;
  out << '\n';
  char buf[64];
  for (std::size_t r = 0; r < data.rows(); ++r) {
    for (std::size_t c = 0; c < data.cols(); ++c) {
      auto res = std::to_chars(buf, buf + sizeof buf, data(r, c));
      if (c) out << ',';
      out.write(buf, res.ptr - buf);
    }
    out << '\n';
  }
}

Matrix read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::MissingFile, "cannot open " + path);
  std::string first;
  const auto pos = in.tellg();
  std::getline(in, first);
  if (!first.empty() && (std::isdigit(static_cast<unsigned char>(first[0])) || first[0] == '-' || first[0] == '.'))
    in.seekg(pos);
  return parse_rows(in, path, false);
}

}  // namespace pcsharp
