#pragma once

#include <array>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace merob {

inline constexpr std::array<std::string_view, 8> kEmotionNames = {
    "anger", "fear", "sadness", "happiness", "tenderness", "valence", "energy", "tension"};

inline constexpr std::array<std::string_view, 7> kMidlevelNames = {
    "melodiousness",       "articulation", "rhythmic_stability", "tonal_stability",
    "rhythmic_complexity", "dissonance",   "modality"};

struct RatingRange {
  double lo = 0.0;
  double hi = 1.0;
};

/// Declared raw rating ranges of the two annotation sources.
inline constexpr RatingRange kEmotionRange{1.0, 7.83};
inline constexpr RatingRange kMidlevelRange{1.0, 10.0};

struct AnnotationRow {
  std::string clip_id;
  std::vector<double> values;
};

struct AnnotationTable {
  std::vector<std::string> columns;
  RatingRange range;         // raw range every column is declared to lie in
  bool normalized = false;   // values already mapped to [0, 1]
  std::vector<AnnotationRow> rows;

  const AnnotationRow* find(std::string_view clip_id) const;
};

/// Parses `clip_id,<columns...>`; the header must match `columns` exactly.
AnnotationTable read_annotation_csv(const std::filesystem::path& path,
                                    std::span<const std::string_view> columns, RatingRange range);

void write_annotation_csv(const std::filesystem::path& path, const AnnotationTable& table);

/// Per-column min-max map of the declared range onto [0, 1]. Ratings outside
/// the range throw ValidationError listing every offending clip_id.
AnnotationTable normalize_targets(const AnnotationTable& table);
AnnotationTable denormalize_targets(const AnnotationTable& table);

inline double normalize_rating(double v, RatingRange r) { return (v - r.lo) / (r.hi - r.lo); }
inline double denormalize_rating(double v, RatingRange r) { return r.lo + v * (r.hi - r.lo); }

}  // namespace merob
