#include "forge/model_gateway.hpp"

#include "forge/error.hpp"

namespace forge {

std::string Turn::render() const {
    std::string out = text;
    if (tool_call) {
        if (!out.empty()) out += '\n';
        out += tool_call->tool_name + ' ' + dump_lossy(tool_call->args);
    }
    if (!tool_response.empty()) {
        if (!out.empty()) out += '\n';
        out += tool_response;
    }
    return out;
}

std::string ModelRequest::latest_turn_text() const {
    if (history.empty()) return task;
    return history.back().render();
}

json ModelRequest::history_json() const {
    json arr = json::array();
    for (const auto& t : history) {
        json j = {{"seq", t.seq}, {"role", t.role}};
        if (!t.text.empty()) j["text"] = t.text;
        if (t.tool_call) j["tool_call"] = {{"tool_name", t.tool_call->tool_name}, {"args", t.tool_call->args}};
        if (!t.tool_response.empty()) j["tool_response"] = t.tool_response;
        arr.push_back(std::move(j));
    }
    return arr;
}

ModelResponse ModelResponse::make_text(std::string text) {
    ModelResponse r;
    r.kind = Kind::text;
    r.text = std::move(text);
    return r;
}

ModelResponse ModelResponse::make_call(std::string tool_name, json args) {
    ModelResponse r;
    r.kind = Kind::tool_call;
    r.tool_call = ToolCall{std::move(tool_name), std::move(args)};
    return r;
}

json ModelResponse::to_json() const {
    if (kind == Kind::text) return {{"kind", "text"}, {"text", text.value_or("")}};
    return {{"kind", "tool_call"},
            {"tool_call", {{"tool_name", tool_call->tool_name}, {"args", tool_call->args}}}};
}

ModelResponse ModelResponse::from_json(const json& j) {
    if (!j.is_object() || !j.contains("kind") || !j["kind"].is_string())
        throw Error(ErrorCode::InvalidTranscript, "response needs a string 'kind'");
    const std::string kind = j["kind"];
    if (kind == "text") {
        if (!j.contains("text") || !j["text"].is_string())
            throw Error(ErrorCode::InvalidTranscript, "text response needs 'text'");
        if (j.contains("tool_call") && !j["tool_call"].is_null())
            throw Error(ErrorCode::InvalidTranscript, "text response must not carry 'tool_call'");
        return make_text(j["text"].get<std::string>());
    }
    if (kind == "tool_call") {
        if (!j.contains("tool_call") || !j["tool_call"].is_object())
            throw Error(ErrorCode::InvalidTranscript, "tool_call response needs 'tool_call'");
        if (j.contains("text") && !j["text"].is_null())
            throw Error(ErrorCode::InvalidTranscript, "tool_call response must not carry 'text'");
        const json& call = j["tool_call"];
        if (!call.contains("tool_name") || !call["tool_name"].is_string())
            throw Error(ErrorCode::InvalidTranscript, "tool_call needs 'tool_name'");
        json args = call.value("args", json::object());
        if (!args.is_object()) throw Error(ErrorCode::InvalidTranscript, "tool_call 'args' must be a document");
        return make_call(call["tool_name"].get<std::string>(), std::move(args));
    }
    throw Error(ErrorCode::InvalidTranscript, "unknown response kind '" + kind + "'");
}

ScriptedTranscript ScriptedTranscript::from_json(const json& j) {
    if (!j.is_object() || !j.contains("steps") || !j["steps"].is_array())
        throw Error(ErrorCode::InvalidTranscript, "transcript needs a 'steps' array");
    ScriptedTranscript t;
    for (const auto& step : j["steps"]) {
        if (!step.is_object() || !step.contains("response"))
            throw Error(ErrorCode::InvalidTranscript, "step needs a 'response'");
        ScriptedStep s;
        if (step.contains("match") && !step["match"].is_null()) {
            if (!step["match"].is_string()) throw Error(ErrorCode::InvalidTranscript, "'match' must be a string");
            s.match = step["match"].get<std::string>();
        }
        s.response = ModelResponse::from_json(step["response"]);
        t.steps.push_back(std::move(s));
    }
    return t;
}

ScriptedTranscript ScriptedTranscript::load(const fs::path& file) {
    json j;
    try {
        j = json::parse(read_file(file));
    } catch (const json::exception& e) {
        throw Error(ErrorCode::ParseError, file.string() + ": " + e.what());
    }
    return from_json(j);
}

json ScriptedTranscript::to_json() const {
    json steps = json::array();
    for (const auto& s : this->steps) {
        json step = {{"response", s.response.to_json()}};
        if (s.match) step["match"] = *s.match;
        steps.push_back(std::move(step));
    }
    return {{"steps", steps}};
}

ScriptedBackend::ScriptedBackend(ScriptedTranscript transcript) : transcript_(std::move(transcript)) {}

ModelResponse ScriptedBackend::complete(const ModelRequest& request) {
    if (in_flight_.fetch_add(1) != 0) {
        in_flight_.fetch_sub(1);
        throw Error(ErrorCode::ConcurrentConsumption,
                    "scripted backend consumed concurrently by '" + request.agent_id + "'");
    }
    struct Release {
        std::atomic<int>& n;
        ~Release() { n.fetch_sub(1); }
    } release{in_flight_};

    std::lock_guard lock(mu_);
    if (cursor_ >= transcript_.steps.size())
        throw Error(ErrorCode::TranscriptExhausted,
                    "transcript exhausted after " + std::to_string(cursor_) + " steps");
    const ScriptedStep& step = transcript_.steps[cursor_];
    if (step.match && request.latest_turn_text().find(*step.match) == std::string::npos)
        throw Error(ErrorCode::PredicateMismatch,
                    "step " + std::to_string(cursor_ + 1) + " expected context containing '" + *step.match + "'");
    requests_.push_back(request);
    ++cursor_;
    return step.response;
}

std::size_t ScriptedBackend::consumed() const {
    std::lock_guard lock(mu_);
    return cursor_;
}

std::size_t ScriptedBackend::remaining() const {
    std::lock_guard lock(mu_);
    return transcript_.steps.size() - cursor_;
}

std::vector<ModelRequest> ScriptedBackend::requests() const {
    std::lock_guard lock(mu_);
    return requests_;
}

void ModelGateway::register_backend(const std::string& backend_id, std::shared_ptr<ModelBackend> backend) {
    if (backend_id.empty() || backend_id == kInheritModel)
        throw Error(ErrorCode::InvalidModel, "'" + backend_id + "' cannot name a backend");
    if (!backend) throw Error(ErrorCode::InvalidModel, "null backend for '" + backend_id + "'");
    std::unique_lock lock(mu_);
    if (!backends_.emplace(backend_id, std::move(backend)).second)
        throw Error(ErrorCode::DuplicateBackend, "backend '" + backend_id + "' already registered");
}

bool ModelGateway::has_backend(const std::string& backend_id) const {
    std::shared_lock lock(mu_);
    return backends_.contains(backend_id);
}

ModelResponse ModelGateway::complete(const std::string& backend_id, const ModelRequest& request) const {
    std::shared_ptr<ModelBackend> backend;
    {
        std::shared_lock lock(mu_);
        auto it = backends_.find(backend_id);
        if (it == backends_.end()) throw Error(ErrorCode::UnknownBackend, "unknown backend '" + backend_id + "'");
        backend = it->second;
    }
    return backend->complete(request);
}

std::string ModelGateway::resolve(const std::string& model_name, const std::string& caller_backend) const {
    const std::string& id = model_name == kInheritModel ? caller_backend : model_name;
    if (!has_backend(id)) throw Error(ErrorCode::InvalidModel, "model '" + model_name + "' is not a registered backend");
    return id;
}

std::vector<std::string> ModelGateway::backend_ids() const {
    std::shared_lock lock(mu_);
    std::vector<std::string> ids;
    for (const auto& [id, _] : backends_) ids.push_back(id);
    return ids;
}

std::size_t estimate_tokens(std::string_view text) noexcept {
    return (text.size() + 3) / 4;
}

}  // namespace forge
