#include "shunted/config_json.hpp"

namespace shunted {

namespace {

Aggregation aggregation_from_string(const std::string& s) {
  if (s == "conv") return Aggregation::ConvStride;
  if (s == "linear") return Aggregation::LinearPool;
  if (s == "avgpool") return Aggregation::AvgPool;
  throw ConfigError("unknown aggregation '" + s + "' (conv|linear|avgpool)");
}

FFNKind ffn_kind_from_string(const std::string& s) {
  if (s == "plain") return FFNKind::Plain;
  if (s == "convffn") return FFNKind::ConvFFN;
  if (s == "detail") return FFNKind::DetailSpecific;
  throw ConfigError("unknown ffn kind '" + s + "' (plain|convffn|detail)");
}

PatchEmbedKind patch_embed_kind_from_string(const std::string& s) {
  if (s == "nonoverlap") return PatchEmbedKind::NonOverlap;
  if (s == "overlap") return PatchEmbedKind::Overlap;
  if (s == "shunted") return PatchEmbedKind::Shunted;
  throw ConfigError("unknown patch embed kind '" + s + "' (nonoverlap|overlap|shunted)");
}

}  // namespace

nlohmann::json to_json(const ModelConfig& cfg) {
  nlohmann::json stages = nlohmann::json::array();
  for (const auto& st : cfg.stages)
    stages.push_back({{"dim", st.dim},
                      {"heads", st.heads},
                      {"depth", st.depth},
                      {"rates", st.rates},
                      {"ffn_ratio", st.ffn_ratio},
                      {"ffn_kind", to_string(st.ffn_kind)},
                      {"aggregation", to_string(st.aggregation)},
                      {"local_enhance", st.use_local_enhance}});
  return {{"name", cfg.name},
          {"patch_embed",
           {{"kind", to_string(cfg.patch_embed.kind)},
            {"in_channels", cfg.patch_embed.in_channels},
            {"out_dim", cfg.patch_embed.out_dim},
            {"mid_convs", cfg.patch_embed.mid_convs}}},
          {"stages", stages},
          {"num_classes", cfg.num_classes},
          {"input_h", cfg.input_h},
          {"input_w", cfg.input_w},
          {"norm_eps", cfg.norm_eps}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig cfg;
  cfg.name = j.at("name").get<std::string>();
  const auto& pe = j.at("patch_embed");
  cfg.patch_embed.kind = patch_embed_kind_from_string(pe.at("kind").get<std::string>());
  cfg.patch_embed.in_channels = pe.at("in_channels").get<long>();
  cfg.patch_embed.out_dim = pe.at("out_dim").get<long>();
  cfg.patch_embed.mid_convs = pe.at("mid_convs").get<int>();
  for (const auto& js : j.at("stages")) {
    StageConfig st;
    st.dim = js.at("dim").get<long>();
    st.heads = js.at("heads").get<long>();
    st.depth = js.at("depth").get<long>();
    st.rates = js.at("rates").get<std::vector<long>>();
    st.ffn_ratio = js.at("ffn_ratio").get<long>();
    st.ffn_kind = ffn_kind_from_string(js.at("ffn_kind").get<std::string>());
    st.aggregation = aggregation_from_string(js.at("aggregation").get<std::string>());
    st.use_local_enhance = js.at("local_enhance").get<bool>();
    cfg.stages.push_back(std::move(st));
  }
  cfg.num_classes = j.at("num_classes").get<long>();
  cfg.input_h = j.at("input_h").get<long>();
  cfg.input_w = j.at("input_w").get<long>();
  cfg.norm_eps = j.at("norm_eps").get<double>();
  cfg.patch_embed.norm_eps = cfg.norm_eps;
  cfg.validate();
  return cfg;
}

}  // namespace shunted
