#pragma once

#include <string>
#include <vector>

#include "ganunlearn/core/png.hpp"
#include "ganunlearn/core/rng.hpp"
#include "ganunlearn/core/tensor.hpp"

namespace gu::synthworld {

// One attribute axis. `neutral` marks the value a caption omits (-1: the
// axis is never captioned at all, e.g. identity).
struct AxisSpec {
  std::string name;
  std::vector<std::string> values;
  int neutral = -1;
  bool captioned = true;
  std::string caption_suffix;  // appended after the value words, may be empty
};

struct AttributeVocabulary {
  std::vector<AxisSpec> axes;

  // The fixed five-axis face world used throughout:
  //   hair_color  {black*, brown, blond, purple, blue}
  //   hair_style  {short*, long_curly, mohawk, afro}
  //   accessory   {none*, spectacles}
  //   expression  {neutral*, surprised, angry}
  //   identity    {id_0..id_7}        (never captioned)
  // * = caption-neutral value.
  static const AttributeVocabulary& standard();

  int axis(const std::string& name) const;               // DomainError if unknown
  int value(int axis_idx, const std::string& v) const;   // DomainError if unknown
  int n_axes() const { return int(axes.size()); }
};

// Value index per axis, aligned with AttributeVocabulary::axes. A value of
// -1 means "unspecified" and is only produced by parse_caption for
// uncaptioned axes; render rejects it.
struct AttributeAssignment {
  std::vector<int> values;
};

struct ImageSample {
  Tensor<float> image;  // [3,64,64] in [0,1]
  AttributeAssignment labels;
  std::string caption;
  uint64_t seed;
};

// Renders the assignment at 64x64. Deterministic in (assignment, seed);
// the seed only drives bounded nuisance jitter: a pose offset of at most
// 2px and low-amplitude background noise. Distinct values on any single
// axis stay at least kSeparationFloor apart in mean per-pixel L1.
inline constexpr double kSeparationFloor = 0.02;
Tensor<float> render(const AttributeVocabulary& vocab, const AttributeAssignment& a, uint64_t seed);

// "a face with purple hair, mohawk hairstyle, spectacles, surprised
// expression"; all-neutral assignments collapse to "a face". Identity is
// never part of the caption.
std::string caption(const AttributeVocabulary& vocab, const AttributeAssignment& a);

// Inverse of caption() over captioned axes; uncaptioned axes come back -1.
AttributeAssignment parse_caption(const AttributeVocabulary& vocab, const std::string& text);

// n uniform iid assignments with per-sample jitter seeds. n <= 0 is a
// domain error.
std::vector<ImageSample> sample_dataset(const AttributeVocabulary& vocab, int n, uint64_t seed);

// PNG per sample plus manifest.csv (file, per-axis labels, caption, seed).
void export_dataset(const std::string& dir, const std::vector<ImageSample>& samples,
                    const AttributeVocabulary& vocab);

double mean_l1(const Tensor<float>& a, const Tensor<float>& b);

}  // namespace gu::synthworld
