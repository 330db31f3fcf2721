// Stand-in for the sandbox worker. Reads one JSON request per line and acts
// on "#fake:" directives found in the reasoning code:
//   #fake:value=V         reply ok with V
//   #fake:error=T:M       reply error with type T and message M
//   #fake:needs_normalizer  ok with #fake:value only when the normalizer has #fake:normalize
//   #fake:hang            never reply
//   #fake:sleep=S         wait S seconds first
//   #fake:garbage         reply with a non-JSON line
//   #fake:wrongid         reply with another id
//   #fake:silent          exit without replying
//   #fake:stderr          write noise to stderr before replying
//   #fake:echo_table      reply ok with the table rows as JSON
// A normalizer containing #fake:normalizer_error fails as normalizer:ValueError.

#include <chrono>
#include <iostream>
#include <string>
#include <thread>

#include <unistd.h>

#include <nlohmann/json.hpp>

namespace {

std::string directive(const std::string& code, const std::string& name) {
    const std::string key = "#fake:" + name + "=";
    const auto pos = code.find(key);
    if (pos == std::string::npos) return {};
    const auto start = pos + key.size();
    const auto end = code.find_first_of("\r\n", start);
    return code.substr(start, end == std::string::npos ? std::string::npos : end - start);
}

bool flag(const std::string& code, const std::string& name) {
    return code.find("#fake:" + name) != std::string::npos;
}

}  // namespace

int main() {
    std::string line;
    while (std::getline(std::cin, line)) {
        const auto req = nlohmann::json::parse(line, nullptr, false);
        if (req.is_discarded()) {
            std::cout << "{\"id\":\"?\",\"status\":\"error\",\"error_type\":\"BadRequest\"}" << std::endl;
            continue;
        }
        const std::string id = req.value("id", "");
        const std::string code = req.value("reasoning_code", "");
        const std::string normalizer = req.value("normalizer_code", "");

        if (flag(code, "stderr"))
            for (int i = 0; i < 2000; ++i) std::cerr << "warning: noisy worker line " << i << "\n";
        if (auto s = directive(code, "sleep"); !s.empty())
            std::this_thread::sleep_for(std::chrono::duration<double>(std::stod(s)));
        if (flag(code, "hang"))
            for (;;) pause();
        if (flag(code, "silent")) return 0;
        if (flag(code, "garbage")) {
            std::cout << "this is not json" << std::endl;
            continue;
        }

        nlohmann::ordered_json reply;
        reply["id"] = flag(code, "wrongid") ? id + "-other" : id;
        if (flag(normalizer, "normalizer_error")) {
            reply["status"] = "error";
            reply["error_type"] = "normalizer:ValueError";
            reply["error_message"] = "could not convert";
        } else if (flag(code, "needs_normalizer") && !flag(normalizer, "normalize")) {
            reply["status"] = "error";
            reply["error_type"] = "TypeError";
            reply["error_message"] = "unsupported operand type(s) for +: 'int' and 'str'";
            reply["traceback"] = "Traceback (most recent call last):\n  File \"<solution>\", line 2\n";
        } else if (flag(code, "echo_table")) {
            reply["status"] = "ok";
            reply["value"] = req.at("table").dump();
        } else if (auto e = directive(code, "error"); !e.empty()) {
            const auto colon = e.find(':');
            reply["status"] = "error";
            reply["error_type"] = e.substr(0, colon);
            reply["error_message"] = colon == std::string::npos ? "" : e.substr(colon + 1);
        } else {
            reply["status"] = "ok";
            reply["value"] = directive(code, "value");
        }
        std::cout << reply.dump() << std::endl;
    }
    return 0;
}
