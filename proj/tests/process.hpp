#pragma once

// Running the command-line tool from tests.

#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cstdio>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "httplib.h"

namespace testing {

struct RunResult {
    int exit_code = -1;
    std::string output;
};

inline std::string quote(const std::string& s) {
    std::string out = "'";
    for (char c : s) out += c == '\'' ? std::string("'\\''") : std::string(1, c);
    return out + "'";
}

/// Runs the CLI with the given arguments, capturing stdout and stderr.
inline RunResult run_cli(const std::vector<std::string>& args) {
    std::string cmd = quote(ICOLORIT_CLI_PATH);
    for (const auto& a : args) cmd += " " + quote(a);
    cmd += " 2>&1";
    RunResult r;
    FILE* p = popen(cmd.c_str(), "r");
    if (!p) return r;
    char buf[4096];
    std::size_t n;
    while ((n = std::fread(buf, 1, sizeof buf, p)) > 0) r.output.append(buf, n);
    const int status = pclose(p);
    r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

/// `icolorit serve` in a child process on a free port; killed on
/// destruction.
class ServerProcess {
public:
    explicit ServerProcess(std::vector<std::string> extra) {
        std::mt19937 rng(std::random_device{}());
        for (int attempt = 0; attempt < 10 && pid_ <= 0; ++attempt) {
            port_ = std::uniform_int_distribution<int>(20000, 60000)(rng);
            std::vector<std::string> args{ICOLORIT_CLI_PATH, "serve", "--port", std::to_string(port_)};
            args.insert(args.end(), extra.begin(), extra.end());
            const pid_t pid = fork();
            if (pid == 0) {
                std::vector<char*> argv;
                for (auto& a : args) argv.push_back(a.data());
                argv.push_back(nullptr);
                if (!std::freopen("/dev/null", "w", stderr)) _exit(127);
                execv(argv[0], argv.data());
                _exit(127);
            }
            if (wait_ready(pid)) {
                pid_ = pid;
            } else {
                kill(pid, SIGKILL);
                waitpid(pid, nullptr, 0);
            }
        }
    }
    ~ServerProcess() {
        if (pid_ > 0) {
            kill(pid_, SIGTERM);
            waitpid(pid_, nullptr, 0);
        }
    }
    ServerProcess(const ServerProcess&) = delete;
    ServerProcess& operator=(const ServerProcess&) = delete;

    bool running() const { return pid_ > 0; }
    int port() const { return port_; }

private:
    bool wait_ready(pid_t pid) {
        for (int i = 0; i < 200; ++i) {
            if (waitpid(pid, nullptr, WNOHANG) == pid) return false;
            httplib::Client c("127.0.0.1", port_);
            c.set_connection_timeout(0, 200000);
            if (auto r = c.Get("/api/health"); r && r->status == 200) return true;
            std::this_thread::sleep_for(std::chrono::milliseconds(50));
        }
        return false;
    }

    pid_t pid_ = -1;
    int port_ = 0;
};

}  // namespace testing
