// Shutdown on SIGINT/SIGTERM for the long-running tools.
#pragma once

#include <csignal>
#include <functional>
#include <pthread.h>
#include <thread>

namespace piheart::tools {

/// Blocks SIGINT and SIGTERM in the calling thread (and so in every thread
/// started after it) and runs `on_signal` from a dedicated waiter thread.
class SignalWatcher {
public:
    explicit SignalWatcher(std::function<void()> on_signal) {
        sigemptyset(&set_);
        sigaddset(&set_, SIGINT);
        sigaddset(&set_, SIGTERM);
        pthread_sigmask(SIG_BLOCK, &set_, nullptr);
        thread_ = std::thread([this, f = std::move(on_signal)] {
            int sig = 0;
            sigwait(&set_, &sig);
            if (!quitting_) {
                f();
            }
        });
    }

    ~SignalWatcher() {
        quitting_ = true;
        pthread_kill(thread_.native_handle(), SIGTERM);
        thread_.join();
    }

    SignalWatcher(const SignalWatcher&) = delete;
    SignalWatcher& operator=(const SignalWatcher&) = delete;

private:
    sigset_t set_{};
    volatile bool quitting_ = false;
    std::thread thread_;
};

} // namespace piheart::tools
