#include "molrl/chemcore.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <iomanip>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

namespace molrl {

namespace {

constexpr std::array<ElementInfo, kNumElements> kElementTable = {{
    {"H", 1, 0.31, 1},
    {"C", 6, 0.76, 4},
    {"N", 7, 0.71, 3},
    {"O", 8, 0.66, 2},
    {"S", 16, 1.05, 2},
}};

// Hill-like output order: C, H, N, O, S.
constexpr std::array<Element, kNumElements> kFormulaOrder = {Element::C, Element::H, Element::N,
                                                             Element::O, Element::S};

constexpr double kDegenerateTol = 1e-9;

}  // namespace

Vec3 normalized(const Vec3& a) {
  const double n = norm(a);
  if (n == 0.0) throw std::invalid_argument("cannot normalize a zero vector");
  return a * (1.0 / n);
}

const ElementInfo& element_info(Element e) { return kElementTable[index_of(e)]; }

std::optional<Element> element_from_symbol(std::string_view sym) {
  for (Element e : kAllElements) {
    if (element_info(e).symbol == sym) return e;
  }
  return std::nullopt;
}

std::optional<Element> element_from_atomic_number(int z) {
  for (Element e : kAllElements) {
    if (element_info(e).atomic_number == z) return e;
  }
  return std::nullopt;
}

RadiusTable default_covalent_radii() {
  RadiusTable r{};
  for (Element e : kAllElements) r[index_of(e)] = element_info(e).covalent_radius;
  return r;
}

// ---------------------------------------------------------------------------

Bag::Bag(const std::array<int, kNumElements>& counts) : counts_(counts) {
  for (int c : counts_) {
    if (c < 0) throw FormulaError("bag counts must be non-negative");
  }
}

int Bag::total() const {
  int t = 0;
  for (int c : counts_) t += c;
  return t;
}

void Bag::take(Element e) {
  if (counts_[index_of(e)] <= 0) {
    throw std::logic_error("no " + std::string(symbol(e)) + " left in bag");
  }
  --counts_[index_of(e)];
}

void Bag::add(Element e, int n) {
  if (n < 0) throw std::invalid_argument("Bag::add: negative count");
  counts_[index_of(e)] += n;
}

std::string Bag::formula_key() const {
  std::string key;
  for (Element e : kFormulaOrder) {
    const int c = count(e);
    if (c == 0) continue;
    key += symbol(e);
    if (c > 1) key += std::to_string(c);
  }
  return key;
}

Bag parse_formula(std::string_view text) {
  if (text.empty()) throw FormulaError("empty formula");
  std::array<int, kNumElements> counts{};
  std::size_t i = 0;
  while (i < text.size()) {
    if (!std::isupper(static_cast<unsigned char>(text[i]))) {
      throw FormulaError("unexpected character '" + std::string(1, text[i]) + "' in formula '" +
                         std::string(text) + "'");
    }
    std::size_t j = i + 1;
    while (j < text.size() && std::islower(static_cast<unsigned char>(text[j]))) ++j;
    const std::string_view sym = text.substr(i, j - i);
    const auto element = element_from_symbol(sym);
    if (!element) throw FormulaError("unknown element '" + std::string(sym) + "'");
    std::size_t k = j;
    while (k < text.size() && std::isdigit(static_cast<unsigned char>(text[k]))) ++k;
    int n = 1;
    if (k > j) {
      if (k - j > 6) throw FormulaError("count too large in formula '" + std::string(text) + "'");
      n = std::stoi(std::string(text.substr(j, k - j)));
      if (n == 0) throw FormulaError("zero count for '" + std::string(sym) + "'");
    }
    counts[index_of(*element)] += n;
    i = k;
  }
  return Bag(counts);
}

// ---------------------------------------------------------------------------

Canvas::Canvas(std::vector<Atom> atoms) : atoms_(std::move(atoms)) {
  for (const auto& a : atoms_) {
    if (!std::isfinite(a.position.x) || !std::isfinite(a.position.y) || !std::isfinite(a.position.z)) {
      throw std::invalid_argument("canvas positions must be finite");
    }
  }
}

void Canvas::append(Element e, const Vec3& position) {
  if (!std::isfinite(position.x) || !std::isfinite(position.y) || !std::isfinite(position.z)) {
    throw std::invalid_argument("canvas positions must be finite");
  }
  atoms_.push_back({e, position});
}

std::vector<Element> Canvas::elements() const {
  std::vector<Element> out;
  out.reserve(atoms_.size());
  for (const auto& a : atoms_) out.push_back(a.element);
  return out;
}

Bag Canvas::composition() const {
  Bag b;
  for (const auto& a : atoms_) b.add(a.element);
  return b;
}

// ---------------------------------------------------------------------------

namespace {

LocalFrame two_atom_frame(const Vec3& origin, const Vec3& neighbor) {
  LocalFrame f;
  f.origin = origin;
  f.e1 = normalized(neighbor - origin);
  // Global axis least parallel to e1; lower axis index wins ties.
  const std::array<Vec3, 3> axes = {Vec3{1, 0, 0}, Vec3{0, 1, 0}, Vec3{0, 0, 1}};
  int best = 0;
  double best_dot = std::abs(dot(f.e1, axes[0]));
  for (int k = 1; k < 3; ++k) {
    const double d = std::abs(dot(f.e1, axes[k]));
    if (d < best_dot) {
      best_dot = d;
      best = k;
    }
  }
  f.e3 = normalized(cross(f.e1, axes[best]));
  f.e2 = cross(f.e3, f.e1);
  return f;
}

}  // namespace

LocalFrame build_frame(const Canvas& canvas, std::size_t focus) {
  if (canvas.empty()) throw std::invalid_argument("build_frame: empty canvas");
  if (focus >= canvas.size()) throw std::out_of_range("build_frame: focus index out of range");

  const Vec3 origin = canvas[focus].position;
  LocalFrame global;
  global.origin = origin;
  if (canvas.size() == 1) return global;

  // Two nearest non-focal atoms; strict '<' keeps the lower index on ties.
  std::size_t n1 = canvas.size();
  std::size_t n2 = canvas.size();
  double d1 = std::numeric_limits<double>::infinity();
  double d2 = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < canvas.size(); ++i) {
    if (i == focus) continue;
    const double d = distance(canvas[i].position, origin);
    if (d < d1) {
      n2 = n1;
      d2 = d1;
      n1 = i;
      d1 = d;
    } else if (d < d2) {
      n2 = i;
      d2 = d;
    }
  }
  if (d1 < 1e-12) return global;

  const Vec3 first = canvas[n1].position;
  if (n2 == canvas.size()) return two_atom_frame(origin, first);

  LocalFrame f;
  f.origin = origin;
  f.e1 = normalized(first - origin);
  const Vec3 second = canvas[n2].position - origin;
  const Vec3 perp = cross(f.e1, second);
  if (norm(perp) <= kDegenerateTol * norm(second)) return two_atom_frame(origin, first);
  f.e3 = normalized(perp);
  f.e2 = cross(f.e3, f.e1);
  return f;
}

Vec3 place_atom(const LocalFrame& frame, const SphericalCoords& c) {
  const double sa = std::sin(c.alpha);
  return frame.origin + c.distance * (std::cos(c.alpha) * frame.e1 + sa * std::cos(c.psi) * frame.e2 +
                                      sa * std::sin(c.psi) * frame.e3);
}

SphericalCoords recover_coords(const LocalFrame& frame, const Vec3& position) {
  const Vec3 v = position - frame.origin;
  const double d = norm(v);
  if (d == 0.0) throw std::invalid_argument("recover_coords: position coincides with the frame origin");
  SphericalCoords c;
  c.distance = d;
  const double x = dot(v, frame.e1);
  const double y = dot(v, frame.e2);
  const double z = dot(v, frame.e3);
  c.alpha = std::atan2(std::hypot(y, z), x);
  if (std::hypot(y, z) <= 1e-12 * d) {
    c.psi = 0.0;
  } else {
    c.psi = wrap_angle(std::atan2(z, y));
  }
  return c;
}

double clamp_alpha(double alpha) { return std::clamp(alpha, kAlphaEps, kPi - kAlphaEps); }

double wrap_angle(double psi) {
  if (!std::isfinite(psi)) return 0.0;
  double w = std::remainder(psi, 2.0 * kPi);  // [-pi, pi]
  if (w <= -kPi) w += 2.0 * kPi;
  return w;
}

// ---------------------------------------------------------------------------

void write_xyz(std::ostream& out, const Canvas& canvas, std::string_view comment) {
  out << canvas.size() << '\n';
  std::string c(comment);
  std::replace(c.begin(), c.end(), '\n', ' ');
  out << c << '\n';
  std::ostringstream row;
  for (const auto& a : canvas.atoms()) {
    row.str("");
    row << std::left << std::setw(2) << symbol(a.element) << std::right << std::fixed
        << std::setprecision(8) << ' ' << std::setw(15) << a.position.x << ' ' << std::setw(15)
        << a.position.y << ' ' << std::setw(15) << a.position.z;
    out << row.str() << '\n';
  }
}

std::vector<XyzRecord> read_xyz(std::istream& in) {
  std::vector<XyzRecord> frames;
  std::string line;
  int lineno = 0;
  auto fail = [&](const std::string& what) {
    throw std::runtime_error("xyz line " + std::to_string(lineno) + ": " + what + ": '" + line + "'");
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream head(line);
    long n = -1;
    if (!(head >> n) || n < 0) fail("expected atom count");
    XyzRecord rec;
    if (!std::getline(in, rec.comment)) fail("missing comment line");
    ++lineno;
    if (!rec.comment.empty() && rec.comment.back() == '\r') rec.comment.pop_back();
    std::vector<Atom> atoms;
    for (long k = 0; k < n; ++k) {
      if (!std::getline(in, line)) fail("truncated frame");
      ++lineno;
      std::istringstream row(line);
      std::string sym;
      Vec3 p;
      if (!(row >> sym >> p.x >> p.y >> p.z)) fail("expected 'Sym x y z'");
      std::optional<Element> e = element_from_symbol(sym);
      if (!e && !sym.empty() && std::isdigit(static_cast<unsigned char>(sym[0]))) {
        e = element_from_atomic_number(std::stoi(sym));
      }
      if (!e) fail("unsupported element");
      atoms.push_back({*e, p});
    }
    rec.canvas = Canvas(std::move(atoms));
    frames.push_back(std::move(rec));
  }
  return frames;
}

std::vector<XyzRecord> read_xyz_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open xyz file '" + path + "'");
  return read_xyz(in);
}

}  // namespace molrl
