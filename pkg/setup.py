"""
Quick setup script to verify environment and dependencies.
"""

import logging
import os
import sys

REQUIREMENTS = os.path.join(os.path.dirname(os.path.abspath(__file__)), 'anticipation',
                            'requirements.txt')
IMPORT_NAMES = {'python-dotenv': 'dotenv'}
SETTINGS = [('ANTICIPATION_LOG_LEVEL', 'INFO'), ('ANTICIPATION_WORKERS', '1'),
            ('ANTICIPATION_PROGRESS', '1')]


def check_python_version(minimum=(3, 10)):
    """Check Python version."""
    if sys.version_info[:2] < minimum:
        print(f"❌ Python {minimum[0]}.{minimum[1]}+ required")
        return False
    print(f"✅ Python {sys.version_info.major}.{sys.version_info.minor}")
    return True


def required_modules(path=REQUIREMENTS):
    """Import names of the packages listed in requirements.txt."""
    modules = []
    with open(path) as f:
        for line in f:
            name = line.split('#')[0].strip()
            for sep in ('>=', '==', '<', '>', '~=', '['):
                name = name.split(sep)[0].strip()
            if name:
                modules.append(IMPORT_NAMES.get(name, name))
    return modules


def check_dependencies(modules=None):
    """Check if required packages are installed."""
    missing = []
    for module in modules or required_modules():
        try:
            __import__(module)
            print(f"✅ {module}")
        except ImportError:
            print(f"❌ {module} not installed")
            missing.append(module)
    return not missing


def check_env_file(path='.env', example='.env.example'):
    """Check that .env exists and sets every variable .env.example documents."""
    if not os.path.exists(path):
        print(f"⚠️  {path} not found (copy from {example}; defaults are used otherwise)")
        return False
    with open(path) as f:
        present = {line.split('=')[0].strip() for line in f if '=' in line}
    documented = {name for name, _ in SETTINGS}
    if os.path.exists(example):
        with open(example) as f:
            documented = {line.split('=')[0].strip() for line in f
                          if '=' in line and not line.lstrip().startswith('#')}
    unset = sorted(documented - present)
    if unset:
        print(f"⚠️  {path} does not set {', '.join(unset)}")
        return False
    print(f"✅ {path} sets every documented variable")
    return True


def check_settings(env=None):
    """Validate the environment settings the CLI will use."""
    env = os.environ if env is None else env
    values = {name: env.get(name, default) for name, default in SETTINGS}
    for name, value in values.items():
        print(f"   {name} = {value}")

    ok = True
    if not isinstance(logging.getLevelName(values['ANTICIPATION_LOG_LEVEL'].upper()), int):
        print("❌ ANTICIPATION_LOG_LEVEL is not a logging level")
        ok = False
    workers = values['ANTICIPATION_WORKERS']
    if not workers.isdigit() or int(workers) < 1:
        print("❌ ANTICIPATION_WORKERS must be a positive integer")
        ok = False
    if values['ANTICIPATION_PROGRESS'] not in ('0', '1', 'true', 'false', 'True', 'False'):
        print("❌ ANTICIPATION_PROGRESS must be 0/1 or true/false")
        ok = False
    return ok


def main():
    """Run all checks."""
    from dotenv import load_dotenv
    load_dotenv()

    print("Goal-Consistent Action Anticipation - Setup Check\n")
    print("=" * 50)

    all_ok = True

    print("\n1. Python Version:")
    all_ok &= check_python_version()

    print("\n2. Dependencies:")
    all_ok &= check_dependencies()

    print("\n3. Environment Configuration:")
    check_env_file()
    all_ok &= check_settings()

    print("\n" + "=" * 50)
    if all_ok:
        print("\n✅ Setup looks good! Try: python -m anticipation.main gen-data --out data/")
    else:
        print("\n⚠️  Some issues found.")
        print("   Run: pip install -r anticipation/requirements.txt")
    return 0 if all_ok else 1


if __name__ == "__main__":
    sys.exit(main())
