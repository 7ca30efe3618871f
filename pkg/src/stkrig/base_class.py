"""Abstract class for configuration objects."""

from __future__ import annotations

import inspect
from typing import Any, Dict, List

from typing_extensions import Self

from .exceptions import ConfigError


class Base:
    """Base class for stkrig configuration objects.

    Parameters are read off the ``__init__`` signature, in the spirit of
    scikit-learn's ``get_params`` and ``set_params``, and every object converts to
    and from plain dictionaries with :meth:`to_dict` and :meth:`from_dict`.

    Notes
    -----
    Nested objects are addressed with the ``<component>__<parameter>`` convention,
    so that ``RunConfig().set_params(model__T=9)`` reaches the nested
    :class:`~stkrig.model.ModelConfig`.
    """

    def get_params(self, deep: bool = True) -> Dict[str, Any]:
        """
        Current values of the ``__init__`` parameters.

        Parameters
        ----------
        deep :
            Also list the parameters of nested ``Base`` objects, as
            ``<component>__<parameter>``.

        Returns
        -------
        :
            Parameter name to value.
        """
        params = {}
        for name in self._get_param_names():
            value = getattr(self, name)
            params[name] = value
            if deep and isinstance(value, Base):
                for sub_name, sub_value in value.get_params(deep=True).items():
                    params[f"{name}__{sub_name}"] = sub_value
        return params

    def set_params(self, **params: Any) -> Self:
        """
        Assign parameters, nested ones included.

        Parameters
        ----------
        **params :
            ``name=value`` or ``<component>__<name>=value`` pairs.

        Returns
        -------
        self :
            The updated instance.

        Raises
        ------
        ConfigError
            If a key does not name a parameter of this object (or of the nested component).
        """
        own = self._get_param_names()
        by_component: Dict[str, Dict[str, Any]] = {}
        for key, value in params.items():
            name, nested, sub_key = key.partition("__")
            if name not in own:
                raise ConfigError(
                    f"Invalid parameter {name!r} for {type(self).__name__}. "
                    f"Valid parameters are: {own!r}."
                )
            if nested:
                by_component.setdefault(name, {})[sub_key] = value
            else:
                setattr(self, name, value)

        # plain values first, so that a replaced component receives its overrides
        for name, sub_params in by_component.items():
            component = getattr(self, name)
            if not isinstance(component, Base):
                raise ConfigError(
                    f"Parameter {name!r} of {type(self).__name__} has no nested parameters."
                )
            component.set_params(**sub_params)
        return self

    def to_dict(self) -> Dict[str, Any]:
        """Return a JSON-serializable nested dictionary of the parameters."""
        return {
            name: value.to_dict() if isinstance(value, Base) else value
            for name, value in self.get_params(deep=False).items()
        }

    @classmethod
    def from_dict(cls, params: Dict[str, Any]) -> Self:
        """Instantiate from a (possibly nested) dictionary, rejecting unknown keys."""
        valid = cls._get_param_names()
        unknown = sorted(set(params) - set(valid))
        if unknown:
            raise ConfigError(
                f"Unknown keys {unknown!r} for {cls.__name__}. Valid parameters are: {valid!r}."
            )
        # nested components accept plain dictionaries in their setters
        return cls(**params)

    @classmethod
    def _get_param_names(cls) -> List[str]:
        """Sorted names of the ``__init__`` parameters."""
        if cls.__init__ is object.__init__:
            return []
        signature = inspect.signature(cls.__init__)
        names = []
        for param in signature.parameters.values():
            if param.kind is param.VAR_POSITIONAL:
                raise RuntimeError(
                    f"{cls.__name__}{signature} takes *args; configuration objects must "
                    "name every parameter in __init__ (no varargs)."
                )
            if param.name != "self" and param.kind is not param.VAR_KEYWORD:
                names.append(param.name)
        return sorted(names)

    def __repr__(self):
        fields = ", ".join(f"{name}={value!r}" for name, value in self.get_params(deep=False).items())
        return f"{type(self).__name__}({fields})"

    def __eq__(self, other):
        if type(self) is not type(other):
            return NotImplemented
        return self.to_dict() == other.to_dict()
