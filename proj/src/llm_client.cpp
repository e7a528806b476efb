#include "pmia/llm_client.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <regex>

#include <httplib.h>
#include <openssl/evp.h>

#include "pmia/error.hpp"
#include "pmia/io.hpp"

namespace pmia {

std::string_view to_string(PromptKind kind) { return kind == PromptKind::General ? "general" : "in_context"; }

PromptKind parse_prompt_kind(std::string_view name) {
  if (name == "general") return PromptKind::General;
  if (name == "in_context") return PromptKind::InContext;
  throw ConfigError("unknown prompt kind '" + std::string(name) + "'");
}

LlmEndpoint LlmEndpoint::from_env() {
  auto get = [](const char* name) {
    const char* v = std::getenv(name);
    return v ? std::string(v) : std::string();
  };
  LlmEndpoint e{get("PMIA_LLM_URL"), get("PMIA_LLM_MODEL"), get("PMIA_LLM_API_KEY")};
  if (e.url.empty()) throw ConfigError("PMIA_LLM_URL is not set");
  if (e.model.empty()) throw ConfigError("PMIA_LLM_MODEL is not set");
  return e;
}

std::string load_prompt(PromptKind kind) {
  const char* override_dir = std::getenv("PMIA_ASSET_DIR");
  const std::filesystem::path dir = override_dir ? override_dir : PMIA_ASSET_DIR;
  return read_file(dir / "prompts" / (std::string(to_string(kind)) + ".txt"));
}

std::vector<double> in_context_example_values() { return {0.65, 0.40, 0.79, 0.92, 0.83}; }

std::string base64_encode(std::string_view bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                reinterpret_cast<const unsigned char*>(bytes.data()), static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

namespace {

nlohmann::json image_part(const Image& img) {
  return {{"type", "image_url"},
          {"image_url", {{"url", "data:image/png;base64," + base64_encode(encode_png(img))}}}};
}

}  // namespace

nlohmann::json build_llm_request(const Image& chart, int k, PromptKind kind, const std::string& model) {
  if (k < 1) throw ValidationError("llm request: K must be positive");
  nlohmann::json content = nlohmann::json::array();
  content.push_back({{"type", "text"}, {"text", load_prompt(kind)}});
  if (kind == PromptKind::InContext) content.push_back(image_part(render_radar(in_context_example_values())));
  content.push_back(image_part(chart));
  content.push_back({{"type", "text"},
                     {"text", "The chart has " + std::to_string(k) +
                                  " axes, starting at 12 o'clock and going clockwise. Answer with a JSON array of " +
                                  std::to_string(k) + " numbers in that order."}});
  return {{"model", model}, {"temperature", 0}, {"messages", {{{"role", "user"}, {"content", content}}}}};
}

std::vector<double> parse_llm_values(std::string_view reply, int k) {
  if (k < 1) throw ValidationError("parse_llm_values: K must be positive");
  auto clamp_all = [](std::vector<double> v) {
    for (double& x : v) x = std::clamp(x, 0.0, 1.0);
    return v;
  };
  for (std::size_t open = reply.find('['); open != std::string_view::npos; open = reply.find('[', open + 1)) {
    const std::size_t close = reply.find(']', open);
    if (close == std::string_view::npos) break;
    const auto j = nlohmann::json::parse(reply.substr(open, close - open + 1), nullptr, false);
    if (j.is_discarded() || !j.is_array() || j.size() != static_cast<std::size_t>(k)) continue;
    if (!std::all_of(j.begin(), j.end(), [](const auto& x) { return x.is_number(); })) continue;
    return clamp_all(j.get<std::vector<double>>());
  }
  std::vector<double> found;
  const std::string text(reply);
  static const std::regex number(R"(\d*\.?\d+)");
  for (auto it = std::sregex_iterator(text.begin(), text.end(), number); it != std::sregex_iterator(); ++it) {
    const auto pos = static_cast<std::size_t>(it->position());
    if (pos > 0 && std::isalpha(static_cast<unsigned char>(text[pos - 1]))) continue;
    const double v = std::stod(it->str());
    if (v >= 0.0 && v <= 1.0) found.push_back(v);
  }
  if (found.size() < static_cast<std::size_t>(k))
    throw ParseError("LLM reply holds " + std::to_string(found.size()) + " values in [0, 1], need " +
                     std::to_string(k));
  return clamp_all(std::vector<double>(found.end() - k, found.end()));
}

ExtractionResult extract_kstate_llm(const Image& chart, int k, PromptKind kind, const LlmEndpoint& endpoint) {
  static const std::regex url_re(R"(^(https?://[^/]+)(/.*)?$)");
  std::smatch m;
  if (!std::regex_match(endpoint.url, m, url_re)) throw ConfigError("invalid LLM endpoint URL '" + endpoint.url + "'");
  const std::string base = m[1].str();
  const std::string path = m[2].matched ? m[2].str() : "/v1/chat/completions";

  const auto body = build_llm_request(chart, k, kind, endpoint.model).dump();
  httplib::Client client(base);
  client.set_connection_timeout(endpoint.timeout_seconds);
  client.set_read_timeout(endpoint.timeout_seconds);
  httplib::Headers headers;
  if (!endpoint.api_key.empty()) headers.emplace("Authorization", "Bearer " + endpoint.api_key);
  const auto res = client.Post(path, headers, body, "application/json");
  if (!res) throw TransportError("LLM request to " + base + " failed: " + httplib::to_string(res.error()));
  if (res->status < 200 || res->status >= 300)
    throw TransportError("LLM endpoint returned HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 200));

  const auto reply = nlohmann::json::parse(res->body, nullptr, false);
  if (reply.is_discarded()) throw ParseError("LLM endpoint returned non-JSON body");
  std::string text;
  try {
    text = reply.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const nlohmann::json::exception&) {
    throw ParseError("LLM reply lacks choices[0].message.content");
  }
  ExtractionResult r;
  r.method = ExtractionMethod::Llm;
  r.estimates = parse_llm_values(text, k);
  r.per_axis_confidence.assign(static_cast<std::size_t>(k), 1);
  r.flagged.assign(static_cast<std::size_t>(k), 0);
  return r;
}

}  // namespace pmia
