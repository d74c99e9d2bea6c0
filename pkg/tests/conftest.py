from pytest_socket import disable_socket


def pytest_runtest_setup():
    """
    Runs before every test.
    The bench simulates everything it measures, so any socket opened
    during a test is a bug. Connections raise SocketBlockedError.
    """
    disable_socket(allow_unix_socket=True)
