#include "naslab/nas/variants.hpp"

#include <cctype>

namespace naslab {

std::string variant_name(DartsVariant v) {
  switch (v) {
    case DartsVariant::darts: return "DARTS";
    case DartsVariant::darts_i: return "DARTS-i";
    case DartsVariant::darts_ii: return "DARTS-ii";
    case DartsVariant::darts_iii: return "DARTS-iii";
  }
  return "DARTS";
}

DartsVariant parse_variant(const std::string& name) {
  for (DartsVariant v : {DartsVariant::darts, DartsVariant::darts_i, DartsVariant::darts_ii, DartsVariant::darts_iii}) {
    std::string lower = variant_name(v);
    for (char& c : lower) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    std::string given = name;
    for (char& c : given) c = c == '_' ? '-' : static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (given == lower) return v;
  }
  throw ConfigError("unknown DARTS variant '" + name + "'");
}

bool uses_depth(DartsVariant v) { return v == DartsVariant::darts_i || v == DartsVariant::darts_iii; }
bool uses_skip_suppression(DartsVariant v) { return v == DartsVariant::darts_ii || v == DartsVariant::darts_iii; }

SearchConfig variant_search_config(DartsVariant v, const SearchConfig& base, const VariantSettings& s) {
  SearchConfig c = base;
  if (uses_depth(v)) c.n_step = s.n_step;
  if (uses_skip_suppression(v)) c.skip_gamma = s.skip_gamma;
  return c;
}

Genotype finalize_variant(DartsVariant v, const Genotype& searched, const VariantSettings& s) {
  Genotype g = searched;
  if (uses_depth(v) && s.deepen) g = rewire(g, RewireStrategy::deepen);
  if (uses_skip_suppression(v) && s.substitute_skips) g = rewire(g, RewireStrategy::substitute_skips);
  return g;
}

VariantResult run_variant(DartsVariant v, const Dataset& data, const CellTemplate& cell, const NetworkTemplate& net,
                          const SearchConfig& base, const VariantSettings& s) {
  VariantResult r;
  r.variant = v;
  r.search = darts_search(data, cell, net, variant_search_config(v, base, s));
  r.genotype = finalize_variant(v, r.search.genotype, s);
  return r;
}

void to_json(nlohmann::json& j, const VariantSettings& s) {
  j = {{"n_step", s.n_step}, {"skip_gamma", s.skip_gamma}, {"substitute_skips", s.substitute_skips}, {"deepen", s.deepen}};
}

void from_json(const nlohmann::json& j, VariantSettings& s) {
  s.n_step = j.value("n_step", s.n_step);
  s.skip_gamma = j.value("skip_gamma", s.skip_gamma);
  s.substitute_skips = j.value("substitute_skips", s.substitute_skips);
  s.deepen = j.value("deepen", s.deepen);
}

}  // namespace naslab
