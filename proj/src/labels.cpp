#include "netseg/labels.hpp"

#include <array>

namespace netseg {

namespace {

constexpr LabelSet bits(std::initializer_list<std::uint8_t> ls) {
  LabelSet s = 0;
  for (auto l : ls) s |= label_bit(l);
  return s;
}

// AT in 2015 includes NCR as printed in the dataset description.
const SchemaMapping kBrats2015{Schema::Brats2015,
                               {{Segment::AT, bits({1, 4})}, {Segment::TC, bits({1, 3, 4})}, {Segment::WT, bits({1, 2, 3, 4})}}};
const SchemaMapping kBrats2018{Schema::Brats2018,
                               {{Segment::AT, bits({4})}, {Segment::TC, bits({1, 4})}, {Segment::WT, bits({1, 2, 4})}}};
const SchemaMapping kBrats2021{Schema::Brats2021,
                               {{Segment::ET, bits({4})}, {Segment::TC, bits({1, 4})}, {Segment::WT, bits({1, 2, 4})}}};
const SchemaMapping kUnified{Schema::Unified4Label,
                             {{Segment::ET, bits({4})},
                              {Segment::TC, bits({1, 4})},
                              {Segment::WT, bits({1, 2, 3, 4})},
                              {Segment::NET, bits({3})},
                              {Segment::TCN, bits({1, 3, 4})}}};

constexpr std::array<std::uint8_t, 4> kLabelPriority = {4, 3, 1, 2};

}  // namespace

std::string_view to_string(Segment s) {
  switch (s) {
    case Segment::AT: return "AT";
    case Segment::ET: return "ET";
    case Segment::TC: return "TC";
    case Segment::WT: return "WT";
    case Segment::NET: return "NET";
    case Segment::TCN: return "TCN";
  }
  return "?";
}

Segment parse_segment(std::string_view name) {
  for (Segment s : {Segment::AT, Segment::ET, Segment::TC, Segment::WT, Segment::NET, Segment::TCN})
    if (name == to_string(s)) return s;
  throw Error(ErrorCode::InvalidArgument, "unknown segment '" + std::string(name) + "'");
}

std::optional<LabelSet> SchemaMapping::labels_of(Segment s) const {
  for (const auto& d : segments)
    if (d.segment == s) return d.labels;
  return std::nullopt;
}

const SchemaMapping& schema_mapping(Schema s) {
  switch (s) {
    case Schema::Brats2015: return kBrats2015;
    case Schema::Brats2018: return kBrats2018;
    case Schema::Brats2021: return kBrats2021;
    case Schema::Unified4Label: return kUnified;
  }
  throw Error(ErrorCode::UnknownSchema, "schema has no segment mapping");
}

std::optional<std::uint8_t> fused_net_label(Schema s) {
  if (s == Schema::Brats2018) return 1;
  if (s == Schema::Brats2021) return 2;
  return std::nullopt;
}

const Mask& SegmentMaskSet::at(Segment s) const {
  auto it = masks.find(s);
  if (it == masks.end()) throw Error(ErrorCode::InvalidArgument, "mask set has no " + std::string(to_string(s)) + " segment");
  return it->second;
}

Shape3 SegmentMaskSet::shape() const {
  if (masks.empty()) throw Error(ErrorCode::InvalidArgument, "empty mask set");
  return masks.begin()->second.shape();
}

Mask label_mask(const Grid<std::uint8_t>& labels, LabelSet set) {
  Mask m(labels.shape(), 0, labels.spacing());
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] < 8 && (set & label_bit(labels[i]))) m[i] = 1;
  return m;
}

bool is_subset(const Mask& a, const Mask& b) {
  if (a.shape() != b.shape()) throw Error(ErrorCode::ShapeMismatch, to_string(a.shape()) + " vs " + to_string(b.shape()));
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i] && !b[i]) return false;
  return true;
}

SegmentMaskSet compose_segments(const LabelVolume& labels) {
  const SchemaMapping& map = schema_mapping(labels.schema());
  SegmentMaskSet out;
  for (const auto& d : map.segments) out.masks.emplace(d.segment, label_mask(labels, d.labels));
  return out;
}

LabelVolume decompose_to_labels(const SegmentMaskSet& masks, Schema schema) {
  if (masks.resolution_factor != 1)
    throw Error(ErrorCode::InvalidArgument, "decompose expects masks at source resolution");
  const SchemaMapping& map = schema_mapping(schema);

  struct Present {
    const Mask* mask;
    LabelSet labels;
  };
  std::vector<Present> present;
  for (const auto& d : map.segments)
    if (auto it = masks.masks.find(d.segment); it != masks.masks.end()) present.push_back({&it->second, d.labels});
  if (present.empty())
    throw Error(ErrorCode::InconsistentMasks, "no segment of schema " + std::string(to_string(schema)) + " is present");
  const Shape3 shape = present.front().mask->shape();
  for (const auto& p : present)
    if (p.mask->shape() != shape) throw Error(ErrorCode::ShapeMismatch, "segment masks differ in shape");

  // membership signature of every label, as a bit per present segment
  std::array<std::uint32_t, 5> signature{};
  for (std::uint8_t l = 0; l <= 4; ++l)
    for (std::size_t s = 0; s < present.size(); ++s)
      if (present[s].labels & label_bit(l)) signature[l] |= 1u << s;

  LabelVolume out(shape, schema, present.front().mask->spacing());
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::uint32_t sig = 0;
    for (std::size_t s = 0; s < present.size(); ++s)
      if ((*present[s].mask)[i]) sig |= 1u << s;
    if (sig == 0) continue;
    bool found = false;
    for (std::uint8_t l : kLabelPriority) {
      if (label_valid(schema, l) && signature[l] == sig) {
        out[i] = l;
        found = true;
        break;
      }
    }
    if (!found)
      throw Error(ErrorCode::InconsistentMasks, "voxel " + std::to_string(i) + " has a segment membership no label produces");
  }
  return out;
}

LabelVolume relabel_for_unification(const LabelVolume& labels, const Mask& net_mask) {
  if (net_mask.shape() != labels.shape())
    throw Error(ErrorCode::ShapeMismatch, "NET mask " + to_string(net_mask.shape()) + " vs labels " + to_string(labels.shape()));
  const auto fused = fused_net_label(labels.schema());
  if (!fused)
    throw Error(ErrorCode::InvalidArgument,
                "unification relabels brats2018 or brats2021 labels, got " + std::string(to_string(labels.schema())));
  LabelVolume out = labels;
  out.set_schema(Schema::Unified4Label);
  for (std::size_t i = 0; i < out.size(); ++i)
    if (net_mask[i] && out[i] == *fused) out[i] = 3;
  return out;
}

LabelVolume fuse_to_schema(const LabelVolume& unified, Schema target) {
  if (unified.schema() != Schema::Unified4Label)
    throw Error(ErrorCode::InvalidArgument, "fuse_to_schema expects unified labels");
  if (target == Schema::Unified4Label || target == Schema::Brats2015) {
    LabelVolume out = unified;
    out.set_schema(target);
    return out;
  }
  const std::uint8_t fused = *fused_net_label(target);
  LabelVolume out = unified;
  out.set_schema(target);
  for (std::size_t i = 0; i < out.size(); ++i)
    if (out[i] == 3) out[i] = fused;
  return out;
}

}  // namespace netseg
