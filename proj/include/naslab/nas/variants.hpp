#pragma once

#include <string>

#include "naslab/nas/search.hpp"

namespace naslab {

/// darts_i deepens (more inner steps, optional deepen rewire), darts_ii suppresses
/// skip connects (skip_gamma and substitution), darts_iii does both.
enum class DartsVariant { darts, darts_i, darts_ii, darts_iii };

struct VariantSettings {
  int n_step = 5;
  double skip_gamma = 0.2;
  bool substitute_skips = true;
  bool deepen = true;
};

std::string variant_name(DartsVariant v);
DartsVariant parse_variant(const std::string& name);
bool uses_depth(DartsVariant v);
bool uses_skip_suppression(DartsVariant v);

SearchConfig variant_search_config(DartsVariant v, const SearchConfig& base, const VariantSettings& s);
/// Post-search rewiring the variant calls for.
Genotype finalize_variant(DartsVariant v, const Genotype& searched, const VariantSettings& s);

struct VariantResult {
  DartsVariant variant = DartsVariant::darts;
  SearchResult search;
  Genotype genotype;
};

VariantResult run_variant(DartsVariant v, const Dataset& data, const CellTemplate& cell, const NetworkTemplate& net,
                          const SearchConfig& base, const VariantSettings& s);

void to_json(nlohmann::json& j, const VariantSettings& s);
void from_json(const nlohmann::json& j, VariantSettings& s);

}  // namespace naslab
