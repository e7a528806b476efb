#pragma once

#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "pmia/image.hpp"
#include "pmia/radar.hpp"

namespace pmia {

enum class PromptKind { General, InContext };

std::string_view to_string(PromptKind kind);
PromptKind parse_prompt_kind(std::string_view name);

/// OpenAI-compatible chat-completions endpoint. from_env reads
/// PMIA_LLM_URL (full URL), PMIA_LLM_MODEL and PMIA_LLM_API_KEY.
struct LlmEndpoint {
  std::string url;
  std::string model;
  std::string api_key;
  int timeout_seconds = 60;

  static LlmEndpoint from_env();
};

/// Prompt text from the asset directory (PMIA_ASSET_DIR overrides the
/// build-time location).
std::string load_prompt(PromptKind kind);

/// Values of the worked example in the in-context prompt, axis order.
std::vector<double> in_context_example_values();

std::string base64_encode(std::string_view bytes);

nlohmann::json build_llm_request(const Image& chart, int k, PromptKind kind, const std::string& model);

/// First JSON array of k numbers in the reply, else the last k numbers in
/// [0, 1] that are not part of a label such as "c3". Clamped to [0, 1].
std::vector<double> parse_llm_values(std::string_view reply, int k);

/// Throws TransportError on network or HTTP failure and ParseError on an
/// unusable reply. Never falls back to edge detection.
ExtractionResult extract_kstate_llm(const Image& chart, int k, PromptKind kind, const LlmEndpoint& endpoint);

}  // namespace pmia
