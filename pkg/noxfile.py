from nox_poetry import session


@session(python=["3.12", "3.11", "3.10"])
def tests(session):
    session.install("pytest", ".")
    session.run("pytest")


@session(python="3.12")
def acceptance(session):
    session.install("pytest", ".")
    session.run("pytest", "-m", "slow")
