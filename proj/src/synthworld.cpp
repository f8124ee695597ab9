#include "ganunlearn/synthworld.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>

#include "ganunlearn/core/csv.hpp"

namespace gu::synthworld {

namespace {

struct Rgb {
  double r, g, b;
};

// Skin tones form a luminance ladder while neighbouring identities swap
// face geometry, so every identity pair stays well separated.
struct IdentityTraits {
  Rgb skin;
  double face_rx, face_ry, eye_dx, eye_dy;
};

// The skin ladder starts at mid luminance so dark facial features keep a
// summed channel contrast of at least ~0.9 against every tone; identity
// pairs adjacent on the ladder differ strongly in geometry instead.
const IdentityTraits kIdentities[8] = {
    {{0.50, 0.35, 0.24}, 12.8, 17.2, 5.4, 1.2},
    {{0.57, 0.42, 0.33}, 16.6, 14.0, 8.0, -1.2},
    {{0.64, 0.47, 0.36}, 13.6, 16.2, 6.2, 0.8},
    {{0.71, 0.55, 0.44}, 17.0, 12.6, 9.2, -0.8},
    {{0.78, 0.60, 0.46}, 14.4, 17.0, 6.7, 1.6},
    {{0.85, 0.68, 0.56}, 16.2, 14.6, 7.6, -1.6},
    {{0.92, 0.74, 0.58}, 14.6, 15.6, 6.9, -0.4},
    {{0.99, 0.83, 0.68}, 15.6, 13.2, 8.3, 0.4},
};

// Hair palette chosen so the closest pair (black/brown) still moves enough
// mass to clear the separation floor on the smallest hairstyle, and blond
// keeps contrast against the light background.
const Rgb kHairColors[5] = {
    {0.03, 0.03, 0.05},  // black
    {0.52, 0.30, 0.13},  // brown
    {0.88, 0.76, 0.34},  // blond
    {0.62, 0.10, 0.72},  // purple
    {0.12, 0.38, 0.92},  // blue
};

const Rgb kBackground = {0.82, 0.86, 0.90};
const Rgb kSclera = {0.97, 0.97, 0.95};
const Rgb kPupil = {0.08, 0.08, 0.10};
const Rgb kBrow = {0.17, 0.12, 0.08};
const Rgb kMouth = {0.40, 0.06, 0.08};
const Rgb kMouthOpen = {0.12, 0.05, 0.06};
const Rgb kTeeth = {0.88, 0.86, 0.80};
const Rgb kGlasses = {0.05, 0.05, 0.08};
const Rgb kGlassesRim = {0.98, 0.55, 0.05};  // amber rim: contrasts with
                                             // brows, background and skin

struct Canvas {
  Tensor<float>& img;  // [3,S,S]
  int side;

  void blend(int x, int y, const Rgb& c, double alpha) {
    if (x < 0 || y < 0 || x >= side || y >= side || alpha <= 0.0) return;
    float a = float(std::min(alpha, 1.0));
    img.at(0, y, x) = (1.f - a) * img.at(0, y, x) + a * float(c.r);
    img.at(1, y, x) = (1.f - a) * img.at(1, y, x) + a * float(c.g);
    img.at(2, y, x) = (1.f - a) * img.at(2, y, x) + a * float(c.b);
  }
};

// All shapes use ~1px analytic soft edges so renders are smooth functions
// of the jitter offset; coverage comes from signed-distance estimates.
void fill_ellipse(Canvas& c, double cx, double cy, double rx, double ry, const Rgb& col) {
  int x0 = int(std::floor(cx - rx - 2)), x1 = int(std::ceil(cx + rx + 2));
  int y0 = int(std::floor(cy - ry - 2)), y1 = int(std::ceil(cy + ry + 2));
  double rmin = std::min(rx, ry);
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) {
      double dx = (x + 0.5 - cx) / rx, dy = (y + 0.5 - cy) / ry;
      double d = std::sqrt(dx * dx + dy * dy);
      c.blend(x, y, col, (1.0 - d) * rmin + 0.5);
    }
}

void ring_ellipse(Canvas& c, double cx, double cy, double rx, double ry, double th, const Rgb& col) {
  int x0 = int(std::floor(cx - rx - th - 2)), x1 = int(std::ceil(cx + rx + th + 2));
  int y0 = int(std::floor(cy - ry - th - 2)), y1 = int(std::ceil(cy + ry + th + 2));
  double rmin = std::min(rx, ry);
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) {
      double dx = (x + 0.5 - cx) / rx, dy = (y + 0.5 - cy) / ry;
      double d = std::sqrt(dx * dx + dy * dy);
      c.blend(x, y, col, (th / 2.0 - std::abs(d - 1.0) * rmin) + 0.5);
    }
}

void capsule(Canvas& c, double x0, double y0, double x1, double y1, double r, const Rgb& col) {
  int bx0 = int(std::floor(std::min(x0, x1) - r - 2)), bx1 = int(std::ceil(std::max(x0, x1) + r + 2));
  int by0 = int(std::floor(std::min(y0, y1) - r - 2)), by1 = int(std::ceil(std::max(y0, y1) + r + 2));
  double vx = x1 - x0, vy = y1 - y0;
  double len2 = vx * vx + vy * vy;
  for (int y = by0; y <= by1; ++y)
    for (int x = bx0; x <= bx1; ++x) {
      double px = x + 0.5 - x0, py = y + 0.5 - y0;
      double t = len2 > 0 ? std::clamp((px * vx + py * vy) / len2, 0.0, 1.0) : 0.0;
      double dx = px - t * vx, dy = py - t * vy;
      double d = std::sqrt(dx * dx + dy * dy);
      c.blend(x, y, col, (r - d) + 0.5);
    }
}

Rgb scale_rgb(const Rgb& c, double f) { return {c.r * f, c.g * f, c.b * f}; }

}  // namespace

const AttributeVocabulary& AttributeVocabulary::standard() {
  static const AttributeVocabulary vocab = [] {
    AttributeVocabulary v;
    v.axes = {
        {"hair_color", {"black", "brown", "blond", "purple", "blue"}, 0, true, "hair"},
        {"hair_style", {"short", "long_curly", "mohawk", "afro"}, 0, true, "hairstyle"},
        {"accessory", {"none", "spectacles"}, 0, true, ""},
        {"expression", {"neutral", "surprised", "angry"}, 0, true, "expression"},
        {"identity", {"id_0", "id_1", "id_2", "id_3", "id_4", "id_5", "id_6", "id_7"}, -1, false, ""},
    };
    return v;
  }();
  return vocab;
}

int AttributeVocabulary::axis(const std::string& name) const {
  for (int i = 0; i < n_axes(); ++i)
    if (axes[size_t(i)].name == name) return i;
  throw DomainError("unknown attribute axis: " + name);
}

int AttributeVocabulary::value(int axis_idx, const std::string& v) const {
  const auto& ax = axes.at(size_t(axis_idx));
  for (int i = 0; i < int(ax.values.size()); ++i)
    if (ax.values[size_t(i)] == v) return i;
  throw DomainError("unknown value '" + v + "' for axis " + ax.name);
}

namespace {
void validate(const AttributeVocabulary& vocab, const AttributeAssignment& a) {
  if (int(a.values.size()) != vocab.n_axes())
    throw DomainError("assignment has " + std::to_string(a.values.size()) + " axes, vocabulary has " +
                      std::to_string(vocab.n_axes()));
  for (int i = 0; i < vocab.n_axes(); ++i) {
    int v = a.values[size_t(i)];
    if (v < 0 || v >= int(vocab.axes[size_t(i)].values.size()))
      throw DomainError("value index " + std::to_string(v) + " out of range for axis " +
                        vocab.axes[size_t(i)].name);
  }
}
}  // namespace

Tensor<float> render(const AttributeVocabulary& vocab, const AttributeAssignment& a, uint64_t seed) {
  validate(vocab, a);
  const int S = kImageSide;
  int hair_color = a.values[0], hair_style = a.values[1], accessory = a.values[2],
      expression = a.values[3], identity = a.values[4];

  Rng rng(splitmix64(seed));
  double jx = rng.uniform(-2.0, 2.0);
  double jy = rng.uniform(-2.0, 2.0);

  Tensor<float> img({3, S, S});
  // background with bounded per-pixel noise
  for (int y = 0; y < S; ++y)
    for (int x = 0; x < S; ++x) {
      double n = rng.uniform(-0.02, 0.02);
      img.at(0, y, x) = float(kBackground.r + n);
      img.at(1, y, x) = float(kBackground.g + n);
      img.at(2, y, x) = float(kBackground.b + n);
    }

  Canvas c{img, S};
  const IdentityTraits& id = kIdentities[identity];
  const Rgb hair = kHairColors[hair_color];
  double cx = S / 2.0 + jx, cy = S / 2.0 + 2.0 + jy;
  double rx = id.face_rx, ry = id.face_ry;

  // hair behind the face
  switch (hair_style) {
    case 0:  // short: a bob that rims the upper half of the head
      fill_ellipse(c, cx, cy - 0.60 * ry, 1.32 * rx, 0.95 * ry + 2.0, hair);
      break;
    case 1:  // long_curly: big top mass plus scalloped side curtains
      fill_ellipse(c, cx, cy - 0.35 * ry, 1.45 * rx, 0.80 * ry, hair);
      for (int s = -1; s <= 1; s += 2)
        for (int k = 0; k < 4; ++k)
          fill_ellipse(c, cx + s * (1.18 * rx - k * 0.8), cy + (-0.35 + 0.38 * k) * ry,
                       0.42 * rx, 0.30 * ry, hair);
      break;
    case 2:  // mohawk: tall central crest; hairline band drawn after the face
      capsule(c, cx, cy - ry - 15.0, cx, cy - 0.40 * ry, 7.5, hair);
      break;
    case 3:  // afro: large puff riding the skull
      fill_ellipse(c, cx, cy - 1.10 * ry, 1.48 * rx, 1.05 * ry + 3.0, hair);
      fill_ellipse(c, cx - 0.85 * rx, cy - 0.70 * ry, 0.70 * rx, 0.62 * ry, hair);
      fill_ellipse(c, cx + 0.85 * rx, cy - 0.70 * ry, 0.70 * rx, 0.62 * ry, hair);
      break;
    default:
      throw DomainError("unhandled hair style");
  }

  // face with a darker outline for definition
  fill_ellipse(c, cx, cy, rx + 0.8, ry + 0.8, scale_rgb(id.skin, 0.72));
  fill_ellipse(c, cx, cy, rx, ry, id.skin);

  if (hair_style == 2) {
    // shaved-side hairline along the top of the skull
    for (int k = 0; k <= 26; ++k) {
      double t = (-155.0 + k * 5.0) * 3.14159265358979323846 / 180.0;
      fill_ellipse(c, cx + 0.92 * rx * std::cos(t), cy + 0.92 * ry * std::sin(t), 2.6, 2.6, hair);
    }
  }

  double ey = cy - 0.18 * ry + id.eye_dy;
  double ex_l = cx - id.eye_dx, ex_r = cx + id.eye_dx;

  // nose
  capsule(c, cx, cy + 0.02 * ry, cx, cy + 0.24 * ry, 1.5, scale_rgb(id.skin, 0.75));

  // eyes: sclera + pupil; expression modulates aperture
  double srx = 3.2, sry = 2.5, pr = 1.4;
  if (expression == 1) {
    srx = 4.8;
    sry = 4.4;
    pr = 2.0;
  } else if (expression == 2) {
    srx = 3.4;
    sry = 1.6;
    pr = 1.2;
  }
  for (double ex : {ex_l, ex_r}) {
    fill_ellipse(c, ex, ey, srx, sry, kSclera);
    fill_ellipse(c, ex, ey, pr, std::min(pr, sry * 0.8), kPupil);
  }

  // mouth
  double my = cy + 0.52 * ry;
  if (expression == 0) {
    capsule(c, cx - 5.5, my, cx + 5.5, my, 1.5, kMouth);
  } else if (expression == 1) {
    fill_ellipse(c, cx, my, 8.2, 6.6, kMouthOpen);
  } else {
    // angry: wide shout with downturned corners
    fill_ellipse(c, cx, my, 8.5, 5.0, kMouthOpen);
    capsule(c, cx - 5.5, my - 0.4, cx + 5.5, my - 0.4, 2.0, kTeeth);
    capsule(c, cx - 11.0, my + 2.2, cx - 5.0, my - 1.0, 2.2, kMouth);
    capsule(c, cx + 5.0, my - 1.0, cx + 11.0, my + 2.2, 2.2, kMouth);
  }

  // spectacles: dark frame plus a bright outer rim; brows go on after so
  // frames never hide the expression
  if (accessory == 1) {
    double gy = ey + 0.5;
    ring_ellipse(c, ex_l, gy, 6.2, 5.6, 2.0, kGlasses);
    ring_ellipse(c, ex_r, gy, 6.2, 5.6, 2.0, kGlasses);
    ring_ellipse(c, ex_l, gy, 8.0, 7.4, 2.1, kGlassesRim);
    ring_ellipse(c, ex_r, gy, 8.0, 7.4, 2.1, kGlassesRim);
    capsule(c, ex_l + 6.2, gy - 1.2, ex_r - 6.2, gy - 1.2, 1.3, kGlasses);
    ring_ellipse(c, ex_l, gy + 1.2, 6.2, 5.6, 1.2, kGlasses);
    ring_ellipse(c, ex_r, gy + 1.2, 6.2, 5.6, 1.2, kGlasses);
    capsule(c, ex_l - 6.2, gy - 0.5, cx - rx - 6.0, gy, 2.2, kGlasses);
    capsule(c, ex_r + 6.2, gy - 0.5, cx + rx + 6.0, gy, 2.2, kGlasses);
  }

  // eyebrows
  double by = ey - 4.5;
  if (expression == 0) {
    capsule(c, ex_l - 4.0, by, ex_l + 4.0, by, 1.5, kBrow);
    capsule(c, ex_r - 4.0, by, ex_r + 4.0, by, 1.5, kBrow);
  } else if (expression == 1) {
    capsule(c, ex_l - 4.0, by - 4.6, ex_l + 4.0, by - 4.6, 1.6, kBrow);
    capsule(c, ex_r - 4.0, by - 4.6, ex_r + 4.0, by - 4.6, 1.6, kBrow);
  } else {
    // angry: inner ends pulled down, plus a furrow between the brows
    capsule(c, ex_l - 5.4, by - 3.4, ex_l + 4.8, by + 2.6, 2.6, kBrow);
    capsule(c, ex_r + 5.4, by - 3.4, ex_r - 4.8, by + 2.6, 2.6, kBrow);
    capsule(c, cx - 1.2, by - 1.0, cx - 1.2, by + 2.5, 0.9, kBrow);
    capsule(c, cx + 1.2, by - 1.0, cx + 1.2, by + 2.5, 0.9, kBrow);
  }


  for (auto& v : img.data) v = std::clamp(v, 0.0f, 1.0f);
  return img;
}

std::string caption(const AttributeVocabulary& vocab, const AttributeAssignment& a) {
  validate(vocab, a);
  std::vector<std::string> pieces;
  for (int i = 0; i < vocab.n_axes(); ++i) {
    const AxisSpec& ax = vocab.axes[size_t(i)];
    if (!ax.captioned || a.values[size_t(i)] == ax.neutral) continue;
    std::string words = ax.values[size_t(a.values[size_t(i)])];
    std::replace(words.begin(), words.end(), '_', ' ');
    if (!ax.caption_suffix.empty()) words += " " + ax.caption_suffix;
    pieces.push_back(words);
  }
  if (pieces.empty()) return "a face";
  std::string out = "a face with ";
  for (size_t i = 0; i < pieces.size(); ++i) {
    if (i) out += ", ";
    out += pieces[i];
  }
  return out;
}

AttributeAssignment parse_caption(const AttributeVocabulary& vocab, const std::string& text) {
  AttributeAssignment a;
  for (const AxisSpec& ax : vocab.axes) a.values.push_back(ax.captioned ? ax.neutral : -1);

  if (text == "a face") return a;
  const std::string prefix = "a face with ";
  if (text.rfind(prefix, 0) != 0) throw DomainError("caption does not match template: " + text);

  // piece string -> (axis, value)
  std::map<std::string, std::pair<int, int>> pieces;
  for (int i = 0; i < vocab.n_axes(); ++i) {
    const AxisSpec& ax = vocab.axes[size_t(i)];
    if (!ax.captioned) continue;
    for (int v = 0; v < int(ax.values.size()); ++v) {
      if (v == ax.neutral) continue;
      std::string words = ax.values[size_t(v)];
      std::replace(words.begin(), words.end(), '_', ' ');
      if (!ax.caption_suffix.empty()) words += " " + ax.caption_suffix;
      pieces[words] = {i, v};
    }
  }

  std::string rest = text.substr(prefix.size());
  size_t pos = 0;
  while (pos < rest.size()) {
    size_t comma = rest.find(", ", pos);
    std::string piece = rest.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
    auto it = pieces.find(piece);
    if (it == pieces.end()) throw DomainError("unknown caption fragment: '" + piece + "'");
    a.values[size_t(it->second.first)] = it->second.second;
    if (comma == std::string::npos) break;
    pos = comma + 2;
  }
  return a;
}

std::vector<ImageSample> sample_dataset(const AttributeVocabulary& vocab, int n, uint64_t seed) {
  if (n <= 0) throw DomainError("sample_dataset: n must be positive");
  Rng rng(seed);
  std::vector<ImageSample> out;
  out.reserve(size_t(n));
  for (int i = 0; i < n; ++i) {
    AttributeAssignment a;
    for (const AxisSpec& ax : vocab.axes)
      a.values.push_back(int(rng.below(int64_t(ax.values.size()))));
    uint64_t jitter_seed = rng.next_u64();
    ImageSample s;
    s.image = render(vocab, a, jitter_seed);
    s.caption = caption(vocab, a);
    s.labels = std::move(a);
    s.seed = jitter_seed;
    out.push_back(std::move(s));
  }
  return out;
}

void export_dataset(const std::string& dir, const std::vector<ImageSample>& samples,
                    const AttributeVocabulary& vocab) {
  std::filesystem::create_directories(dir);
  std::vector<std::string> header = {"file"};
  for (const AxisSpec& ax : vocab.axes) header.push_back(ax.name);
  header.push_back("caption");
  header.push_back("seed");
  CsvWriter csv(dir + "/manifest.csv", header);
  char name[32];
  for (size_t i = 0; i < samples.size(); ++i) {
    std::snprintf(name, sizeof(name), "img_%05zu.png", i);
    write_png_rgb8(dir + "/" + name, samples[i].image);
    std::vector<std::string> row = {name};
    for (int ax = 0; ax < vocab.n_axes(); ++ax)
      row.push_back(vocab.axes[size_t(ax)].values[size_t(samples[i].labels.values[size_t(ax)])]);
    row.push_back(samples[i].caption);
    row.push_back(std::to_string(samples[i].seed));
    csv.row(row);
  }
}

double mean_l1(const Tensor<float>& a, const Tensor<float>& b) {
  if (!a.same_shape(b)) throw DomainError("mean_l1: shape mismatch");
  double s = 0;
  for (int64_t i = 0; i < a.numel(); ++i) s += std::abs(double(a[i]) - double(b[i]));
  return s / double(a.numel());
}

}  // namespace gu::synthworld
