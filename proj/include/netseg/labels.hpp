#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string_view>
#include <vector>

#include "netseg/volume.hpp"

namespace netseg {

/// Evaluation segments. AT is the pre-2021 name of the smallest hierarchical part.
enum class Segment { AT, ET, TC, WT, NET, TCN };

std::string_view to_string(Segment s);
Segment parse_segment(std::string_view name);

/// Bit l set means data label l belongs to the segment.
using LabelSet = std::uint8_t;
constexpr LabelSet label_bit(std::uint8_t l) { return static_cast<LabelSet>(1u << l); }

struct SegmentDef {
  Segment segment;
  LabelSet labels;
};

/// Which data labels compose each evaluation segment under one schema.
struct SchemaMapping {
  Schema schema;
  std::vector<SegmentDef> segments;

  std::optional<LabelSet> labels_of(Segment s) const;
};

const SchemaMapping& schema_mapping(Schema s);

/// The label that carries merged NCR+NET (2018) or ED+NET (2021).
std::optional<std::uint8_t> fused_net_label(Schema s);

struct SegmentMaskSet {
  std::map<Segment, Mask> masks;
  std::size_t resolution_factor = 1;

  const Mask& at(Segment s) const;
  bool contains(Segment s) const { return masks.count(s) != 0; }
  Shape3 shape() const;
};

SegmentMaskSet compose_segments(const LabelVolume& labels);

/// Inverse of compose_segments. Each voxel takes the label whose segment signature matches,
/// trying ET(4), NET(3), NCR(1), ED(2) in that order. Throws InconsistentMasks when none matches.
LabelVolume decompose_to_labels(const SegmentMaskSet& masks, Schema schema);

/// Moves voxels under net_mask out of the schema's fused label into label 3.
LabelVolume relabel_for_unification(const LabelVolume& labels, const Mask& net_mask);

/// Re-expresses unified labels in a legacy schema by merging NET back into its fused label.
LabelVolume fuse_to_schema(const LabelVolume& unified, Schema target);

Mask label_mask(const Grid<std::uint8_t>& labels, LabelSet set);

/// Checks a ⊆ b voxelwise.
bool is_subset(const Mask& a, const Mask& b);

}  // namespace netseg
