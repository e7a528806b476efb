#include <doctest.h>

#include <thread>

#include <httplib.h>

#include "pmia/error.hpp"
#include "pmia/llm_client.hpp"

using namespace pmia;

TEST_CASE("base64") {
  CHECK(base64_encode("") == "");
  CHECK(base64_encode("f") == "Zg==");
  CHECK(base64_encode("fo") == "Zm8=");
  CHECK(base64_encode("foobar") == "Zm9vYmFy");
}

TEST_CASE("reply parsing") {
  CHECK(parse_llm_values("[0.1, 0.2, 0.3]", 3) == std::vector<double>{0.1, 0.2, 0.3});
  CHECK(parse_llm_values("Sure! The values are [0.5, 1, 0] as requested.", 3) == std::vector<double>{0.5, 1.0, 0.0});
  // A JSON array of the wrong length is skipped for the next one.
  CHECK(parse_llm_values("[1, 2] then [0.4, 0.6, 0.8]", 3) == std::vector<double>{0.4, 0.6, 0.8});
  // Labels like c1 are not values; out-of-range numbers are ignored.
  CHECK(parse_llm_values("c1: 0.25\nc2: 0.5\nc3: .75 (as percent: 75)", 3) ==
        std::vector<double>{0.25, 0.5, 0.75});
  CHECK(parse_llm_values("[1.2, -0.1, 0.5]", 3) == std::vector<double>{1.0, 0.0, 0.5});
  CHECK_THROWS_AS(parse_llm_values("no numbers here", 2), ParseError);
  CHECK_THROWS_AS(parse_llm_values("[0.1]", 0), ValidationError);
}

TEST_CASE("prompt assets and request layout") {
  CHECK_FALSE(load_prompt(PromptKind::General).empty());
  CHECK_FALSE(load_prompt(PromptKind::InContext).empty());
  CHECK(parse_prompt_kind("in_context") == PromptKind::InContext);
  CHECK_THROWS_AS(parse_prompt_kind("cot"), ConfigError);
  const Image chart(32, 32);
  const auto general = build_llm_request(chart, 8, PromptKind::General, "m");
  const auto& parts = general.at("messages").at(0).at("content");
  CHECK(parts.size() == 3);
  CHECK(parts.at(1).at("image_url").at("url").get<std::string>().starts_with("data:image/png;base64,"));
  CHECK(build_llm_request(chart, 8, PromptKind::InContext, "m").at("messages").at(0).at("content").size() == 4);
  CHECK(in_context_example_values().size() == 5);
}

TEST_CASE("unreachable endpoint raises a transport error") {
  LlmEndpoint e{"http://127.0.0.1:1", "m", "", 2};
  CHECK_THROWS_AS(extract_kstate_llm(Image(16, 16), 5, PromptKind::General, e), TransportError);
  e.url = "ftp://example";
  CHECK_THROWS_AS(extract_kstate_llm(Image(16, 16), 5, PromptKind::General, e), ConfigError);
}

TEST_CASE("local mock endpoint") {
  httplib::Server server;
  std::string seen_auth, seen_model;
  server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    seen_auth = req.get_header_value("Authorization");
    seen_model = nlohmann::json::parse(req.body).at("model").get<std::string>();
    const nlohmann::json reply = {{"choices", {{{"message", {{"content", "[0.1, 0.2, 0.3, 0.4, 0.5]"}}}}}}};
    res.set_content(reply.dump(), "application/json");
  });
  server.Post("/fail", [](const httplib::Request&, httplib::Response& res) {
    res.status = 503;
    res.set_content("busy", "text/plain");
  });
  server.Post("/garbled", [](const httplib::Request&, httplib::Response& res) {
    res.set_content("{\"choices\": []}", "application/json");
  });
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread t([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  const std::string base = "http://127.0.0.1:" + std::to_string(port);
  LlmEndpoint e{base, "test-model", "secret", 5};
  const auto r = extract_kstate_llm(Image(16, 16), 5, PromptKind::InContext, e);
  CHECK(r.method == ExtractionMethod::Llm);
  CHECK(r.ok());
  CHECK(r.estimates == std::vector<double>{0.1, 0.2, 0.3, 0.4, 0.5});
  CHECK(seen_auth == "Bearer secret");
  CHECK(seen_model == "test-model");

  e.url = base + "/fail";
  CHECK_THROWS_AS(extract_kstate_llm(Image(16, 16), 5, PromptKind::General, e), TransportError);
  e.url = base + "/garbled";
  CHECK_THROWS_AS(extract_kstate_llm(Image(16, 16), 5, PromptKind::General, e), ParseError);

  server.stop();
  t.join();
}
