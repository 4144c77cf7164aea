#pragma once

// HTTP text-generation client shared by corpus synthesis and the
// model-as-judge path. Request: JSON {prompt, max_tokens}; response:
// JSON {text}.

#include <optional>
#include <string>

#include <httplib.h>
#include <json.hpp>

#include "singfuse/corpus.hpp"

namespace singfuse {

class http_text_generator : public text_generator {
  public:
    http_text_generator(const std::string & host, int port, const std::string & path = "/generate",
                        int timeout_sec = 10)
        : client_(host, port), path_(path) {
        client_.set_connection_timeout(timeout_sec);
        client_.set_read_timeout(timeout_sec);
    }

    // "http://host:port[/path]"; path defaults to /generate
    explicit http_text_generator(const std::string & url, int timeout_sec = 10)
        : client_(base_of(url)), path_(path_of(url)) {
        client_.set_connection_timeout(timeout_sec);
        client_.set_read_timeout(timeout_sec);
    }

    std::optional<std::string> generate(const std::string & prompt, int max_tokens) override {
        nlohmann::json req = {{"prompt", prompt}, {"max_tokens", max_tokens}};
        auto res = client_.Post(path_, req.dump(), "application/json");
        if (!res || res->status != 200) return std::nullopt;
        try {
            auto j = nlohmann::json::parse(res->body);
            if (!j.contains("text")) return std::nullopt;
            return j["text"].get<std::string>();
        } catch (const nlohmann::json::exception &) {
            return std::nullopt;
        }
    }

  private:
    static std::string base_of(const std::string & url) {
        size_t scheme = url.find("://");
        size_t start = scheme == std::string::npos ? 0 : scheme + 3;
        size_t slash = url.find('/', start);
        return slash == std::string::npos ? url : url.substr(0, slash);
    }
    static std::string path_of(const std::string & url) {
        size_t scheme = url.find("://");
        size_t start = scheme == std::string::npos ? 0 : scheme + 3;
        size_t slash = url.find('/', start);
        return slash == std::string::npos ? std::string("/generate") : url.substr(slash);
    }

    httplib::Client client_;
    std::string path_;
};

} // namespace singfuse
